"""Simulation and convergence certificates for a distributed primal-dual flow.

Agents on a weighted, possibly unbalanced, directed graph run::

    x_dot = -gamma grad fbar(x) - L z - alpha L x
    z_dot = beta L x

with ``fbar_i = f_i / r_i`` and ``r`` the positive left null vector of the
Laplacian.  The local costs may be nonconvex as long as their sum is
strongly convex.
"""

from ._backend import BACKEND
from .certificates import CertificateReport, PMPair, build_pm, certify, gamma_max, required_connectivity
from .costs import Constants, LocalCost, Problem, constants, solve_centralized
from .digraph import Digraph, SpectralData, spectral_data
from .dynamics import Gains, IntegratorConfig, State, Trajectory, integrate

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CertificateReport", "PMPair", "build_pm", "certify", "gamma_max", "required_connectivity",
    "Constants", "LocalCost", "Problem", "constants", "solve_centralized",
    "Digraph", "SpectralData", "spectral_data",
    "Gains", "IntegratorConfig", "State", "Trajectory", "integrate",
]
