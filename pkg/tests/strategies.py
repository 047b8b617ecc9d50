"""Hypothesis strategies shared by the test modules."""

import numpy as np
from hypothesis import strategies as st

from pdflow.digraph import Digraph


@st.composite
def strongly_connected_digraphs(draw, min_n=2, max_n=7):
    """Random digraph containing a Hamiltonian cycle, hence strongly connected."""
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    a = np.zeros((n, n))
    for k in range(n):
        src, dst = perm[k], perm[(k + 1) % n]
        a[dst, src] = rng.uniform(0.2, 3.0)
    extra = rng.random((n, n)) < 0.3
    np.fill_diagonal(extra, False)
    a[extra] += rng.uniform(0.1, 2.0, size=extra.sum())
    return Digraph(a)
