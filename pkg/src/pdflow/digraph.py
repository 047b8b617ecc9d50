"""Weighted digraphs, their Laplacians and the spectral data used by the certificates.

Convention: ``adjacency[i, j]`` is the weight with which node ``i`` receives
information from node ``j``.  The Laplacian is ``D - A`` with ``D`` the
diagonal of row sums, so ``L @ 1 = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    """Malformed graph input (negative weights, self-loops, bad shape)."""


class RankError(ValueError):
    """The Laplacian null space is not one-dimensional."""


# singular values below NULL_TOL * ||L|| are treated as zero
NULL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Digraph:
    """Weighted directed graph on ``n`` nodes.

    Parameters
    ----------
    adjacency : ndarray, shape (n, n)
        Nonnegative weights, zero diagonal.  ``adjacency[i, j] > 0`` means an
        edge ``j -> i``.
    name : str, optional
        Free-form label carried into output metadata.
    """

    adjacency: np.ndarray
    name: str = field(default="", compare=False)

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError(f"adjacency must be square, got shape {a.shape}")
        if a.shape[0] < 2:
            raise GraphError("a digraph needs at least 2 nodes")
        if not np.all(np.isfinite(a)):
            raise GraphError("adjacency has non-finite entries")
        if np.any(a < 0):
            raise GraphError("edge weights must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise GraphError("self-loops are not allowed (nonzero diagonal)")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, n, edges, name=""):
        """Build from ``(src, dst, weight)`` triples with 0-based node indices.

        ``src -> dst`` means ``dst`` receives from ``src``.
        """
        a = np.zeros((n, n))
        for src, dst, w in edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise GraphError(f"edge ({src}, {dst}) out of range for n={n}")
            a[dst, src] += w
        return cls(a, name=name)

    def edges(self):
        """List of ``(src, dst, weight)`` with 0-based indices."""
        dst, src = np.nonzero(self.adjacency)
        return [(int(s), int(d), float(self.adjacency[d, s])) for d, s in zip(dst, src)]

    def is_balanced(self, tol=1e-12) -> bool:
        """True when in-degree equals out-degree at every node (1ᵀL = 0)."""
        return bool(np.all(np.abs(self.adjacency.sum(axis=0) - self.adjacency.sum(axis=1)) <= tol))

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.adjacency).tobytes()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Laplacian and the left-eigenvector quantities derived from it.

    Attributes
    ----------
    L : ndarray
        Laplacian ``D - A``.
    r : ndarray
        Positive left null vector of ``L`` normalized to sum one.
    rho : float
        Generalized algebraic connectivity, the minimum of
        ``x' (RL + L'R) x / (2 x' R x)`` over ``r' x = 0``.
    """

    L: np.ndarray
    r: np.ndarray
    rho: float

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @cached_property
    def R(self) -> np.ndarray:
        return np.diag(self.r)

    @cached_property
    def Ltilde(self) -> np.ndarray:
        RL = self.r[:, None] * self.L
        return RL + RL.T

    @property
    def rmin(self) -> float:
        return float(self.r.min())

    @property
    def rho_rmin(self) -> float:
        return self.rho * self.rmin


def laplacian(g: Digraph) -> np.ndarray:
    """Return ``D - A`` for the digraph ``g``."""
    a = g.adjacency
    return np.diag(a.sum(axis=1)) - a


def strongly_connected(g: Digraph) -> bool:
    """True iff every node reaches every other node along positive-weight edges."""
    support = csr_matrix((g.adjacency > 0).astype(np.int8))
    ncomp, _ = connected_components(support, directed=True, connection="strong")
    return ncomp == 1


def left_eigenvector(L) -> np.ndarray:
    """Positive left null vector of a Laplacian, normalized so its entries sum to one.

    Raises
    ------
    RankError
        If the numerical null space of ``L'`` is not one-dimensional or the
        null vector has mixed signs.
    """
    L = np.asarray(L, dtype=float)
    _, s, vt = np.linalg.svd(L.T)
    scale = max(np.linalg.norm(L, 2), 1.0)
    null_dim = int(np.sum(s <= NULL_TOL * scale))
    if null_dim != 1:
        raise RankError(f"null space of L' has dimension {null_dim}, expected 1 (graph not strongly connected?)")
    v = vt[-1]
    if v.sum() < 0:
        v = -v
    if np.any(v <= 0):
        raise RankError("left null vector has mixed signs")
    return v / v.sum()


def _orthogonal_complement(r: np.ndarray) -> np.ndarray:
    # Householder reflector sending r/|r| to e_1; its remaining columns span r-perp.
    v = r / np.linalg.norm(r)
    w = v.copy()
    w[0] += np.copysign(1.0, v[0])
    H = np.eye(r.size) - 2.0 * np.outer(w, w) / (w @ w)
    return H[:, 1:]


def generalized_connectivity(L, r) -> float:
    """Minimum of ``x' (RL + L'R) x / (2 x' R x)`` over nonzero ``x`` with ``r' x = 0``."""
    L = np.asarray(L, dtype=float)
    r = np.asarray(r, dtype=float)
    B = _orthogonal_complement(r)
    RL = r[:, None] * L
    Lt = RL + RL.T
    A = B.T @ Lt @ B
    Bm = 2.0 * (B.T * r) @ B
    A = 0.5 * (A + A.T)
    Bm = 0.5 * (Bm + Bm.T)
    if np.linalg.cond(Bm) > 1e12:
        raise GraphError("weighting matrix restricted to r-perp is singular")
    return float(sla.eigh(A, Bm, eigvals_only=True)[0])


def scale(g: Digraph, s: float) -> Digraph:
    """Uniformly scale all edge weights by ``s > 0``."""
    if not s > 0:
        raise GraphError(f"scale factor must be positive, got {s}")
    return Digraph(g.adjacency * s, name=f"{g.name}*{s:g}" if g.name else "")


def spectral_data(g: Digraph) -> SpectralData:
    """Compute ``L``, ``r`` and ``rho`` for a strongly connected digraph."""
    L = laplacian(g)
    r = left_eigenvector(L)
    return SpectralData(L=L, r=r, rho=generalized_connectivity(L, r))


def load_graph(path) -> Digraph:
    """Read a graph file.

    The file is YAML or JSON with keys ``n`` and ``edges``, each edge a mapping
    ``{from, to, weight}`` with 1-based node labels.  An optional ``name`` key
    is allowed; any other key is rejected.
    """
    import yaml

    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return graph_from_dict(doc, name=str(path))


def graph_from_dict(doc, name="") -> Digraph:
    if not isinstance(doc, dict):
        raise GraphError("graph document must be a mapping")
    unknown = set(doc) - {"n", "edges", "name"}
    if unknown:
        raise GraphError(f"unknown keys in graph document: {sorted(unknown)}")
    try:
        n = int(doc["n"])
        edges = [(int(e["from"]) - 1, int(e["to"]) - 1, float(e.get("weight", 1.0))) for e in doc["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError(f"malformed graph document: {exc}") from exc
    return Digraph.from_edges(n, edges, name=doc.get("name", name))


def graph_to_dict(g: Digraph) -> dict:
    return {
        "name": g.name,
        "n": g.n,
        "edges": [{"from": s + 1, "to": d + 1, "weight": w} for s, d, w in g.edges()],
    }
