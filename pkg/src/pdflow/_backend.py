"""Pick the compiled kernels when importable, the numpy ones otherwise.

Set ``PDFLOW_PURE_PYTHON=1`` to force the numpy path.
"""

import os

if os.environ.get("PDFLOW_PURE_PYTHON", "").strip() not in ("", "0"):
    from . import _kernels_py as kernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        from . import _kernels_py as kernels

BACKEND = kernels.NAME
