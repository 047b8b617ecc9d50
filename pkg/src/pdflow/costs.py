"""Local cost functions in quadratic + exponential + sine form.

Each local cost is

    f(x) = 1/2 x'Hx + c'x + sum_k a_k exp(e_k'x) + sum_k b_k sin(s_k'x)

so gradients, Hessians and certified constants are all available in closed
form.  Lipschitz constants hold over a box ``[-B, B]^m``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

log = logging.getLogger(__name__)


class ConvexityError(ValueError):
    """The global cost is not strongly convex (mu <= 1e-12)."""


class NewtonError(RuntimeError):
    """Centralized Newton solve did not converge within its iteration limit."""


MU_FLOOR = 1e-12
CANCEL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LocalCost:
    """One agent's cost.

    Parameters
    ----------
    H : (m, m) array
        Symmetric Hessian of the quadratic part.
    c : (m,) array, optional
        Linear term.
    exp_atoms : list of (a, e)
        Terms ``a * exp(e'x)``.
    sin_atoms : list of (b, s)
        Terms ``b * sin(s'x)``.
    """

    H: np.ndarray
    c: np.ndarray | None = None
    exp_atoms: tuple = ()
    sin_atoms: tuple = ()

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError(f"H must be square, got {H.shape}")
        if not np.allclose(H, H.T, rtol=0, atol=1e-12):
            raise ValueError("H must be symmetric")
        m = H.shape[0]
        c = np.zeros(m) if self.c is None else np.array(self.c, dtype=float).reshape(m)
        exp_atoms = tuple((float(a), _vec(e, m)) for a, e in self.exp_atoms)
        sin_atoms = tuple((float(b), _vec(s, m)) for b, s in self.sin_atoms)
        for arr in (H, c):
            arr.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "exp_atoms", exp_atoms)
        object.__setattr__(self, "sin_atoms", sin_atoms)

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = 0.5 * x @ self.H @ x + self.c @ x
        v += sum(a * np.exp(e @ x) for a, e in self.exp_atoms)
        v += sum(b * np.sin(s @ x) for b, s in self.sin_atoms)
        return float(v)

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = self.H.copy()
        for a, e in self.exp_atoms:
            h += a * np.exp(e @ x) * np.outer(e, e)
        for b, s in self.sin_atoms:
            h -= b * np.sin(s @ x) * np.outer(s, s)
        return h


def _vec(v, m):
    v = np.array(v, dtype=float).reshape(m)
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class Problem:
    """N local costs sharing a decision dimension m, plus the certification box."""

    costs: tuple
    box_halfwidth: float = 5.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        costs = tuple(self.costs)
        if not costs:
            raise ValueError("problem needs at least one agent")
        m = costs[0].m
        if any(c.m != m for c in costs):
            raise ValueError("all local costs must share the decision dimension")
        if not self.box_halfwidth > 0:
            raise ValueError("box_halfwidth must be positive")
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "box_halfwidth", float(self.box_halfwidth))

    @property
    def N(self) -> int:
        return len(self.costs)

    @property
    def m(self) -> int:
        return self.costs[0].m

    @cached_property
    def packed(self) -> "PackedCosts":
        return PackedCosts.from_problem(self)

    def value(self, x) -> float:
        """Global cost evaluated at a common decision ``x``."""
        return sum(c.value(x) for c in self.costs)

    def stacked_value(self, X) -> float:
        """Sum of ``f_i(x_i)`` for a stack ``X`` of shape (N, m)."""
        X = np.reshape(X, (self.N, self.m))
        return sum(c.value(x) for c, x in zip(self.costs, X))

    def hessian(self, x) -> np.ndarray:
        return sum(c.hessian(x) for c in self.costs)


@dataclass(frozen=True)
class PackedCosts:
    """Flat arrays describing all atoms, consumed by the integration kernels."""

    H: np.ndarray          # (N, m, m)
    c: np.ndarray          # (N, m)
    exp_agent: np.ndarray  # (K,) intp
    exp_coef: np.ndarray   # (K,)
    exp_dir: np.ndarray    # (K, m)
    sin_agent: np.ndarray
    sin_coef: np.ndarray
    sin_dir: np.ndarray

    @classmethod
    def from_problem(cls, p: Problem):
        m = p.m

        def atoms(kind):
            agent, coef, dirs = [], [], []
            for i, cost in enumerate(p.costs):
                for a, e in getattr(cost, kind):
                    agent.append(i)
                    coef.append(a)
                    dirs.append(e)
            return (
                np.array(agent, dtype=np.intp),
                np.array(coef, dtype=float),
                np.array(dirs, dtype=float).reshape(len(dirs), m),
            )

        ea, ec, ed = atoms("exp_atoms")
        sa, sc, sd = atoms("sin_atoms")
        return cls(
            H=np.ascontiguousarray([c.H for c in p.costs]),
            c=np.ascontiguousarray([c.c for c in p.costs]),
            exp_agent=ea, exp_coef=ec, exp_dir=np.ascontiguousarray(ed),
            sin_agent=sa, sin_coef=sc, sin_dir=np.ascontiguousarray(sd),
        )

    def stacked_grad(self, X) -> np.ndarray:
        """Row i holds the gradient of f_i at X[i]; leading batch axes are allowed."""
        X = np.asarray(X, dtype=float)
        G = np.einsum("ikl,...il->...ik", self.H, X) + self.c
        for i, a, e in zip(self.exp_agent, self.exp_coef, self.exp_dir):
            G[..., i, :] += (a * np.exp(X[..., i, :] @ e))[..., None] * e
        for i, b, s in zip(self.sin_agent, self.sin_coef, self.sin_dir):
            G[..., i, :] += (b * np.cos(X[..., i, :] @ s))[..., None] * s
        return G

    def stacked_hessian(self, X) -> np.ndarray:
        """Local Hessians at the rows of X, shape (..., N, m, m)."""
        X = np.asarray(X, dtype=float)
        Hs = np.broadcast_to(self.H, X.shape[:-2] + self.H.shape).copy()
        for i, a, e in zip(self.exp_agent, self.exp_coef, self.exp_dir):
            Hs[..., i, :, :] += (a * np.exp(X[..., i, :] @ e))[..., None, None] * np.outer(e, e)
        for i, b, s in zip(self.sin_agent, self.sin_coef, self.sin_dir):
            Hs[..., i, :, :] -= (b * np.sin(X[..., i, :] @ s))[..., None, None] * np.outer(s, s)
        return Hs


@dataclass(frozen=True)
class Constants:
    """Strong-convexity modulus of the global cost and per-agent gradient Lipschitz constants."""

    mu: float
    l: np.ndarray
    mu_method: str = "exact"

    @property
    def lbar(self) -> float:
        return float(np.max(self.l))

    def stacked(self) -> "Constants":
        """Constants with mu divided by the agent count.

        ``mu / N`` is the modulus of ``sum_i f_i(x_i)`` along the consensus
        subspace measured in the stacked norm, which is what the sector bound
        on the gradient feedback actually delivers.
        """
        return Constants(mu=self.mu / len(self.l), l=self.l, mu_method=self.mu_method + "/N")


def grad_local(cost: LocalCost, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = cost.H @ x + cost.c
    for a, e in cost.exp_atoms:
        g = g + a * np.exp(e @ x) * e
    for b, s in cost.sin_atoms:
        g = g + b * np.cos(s @ x) * s
    return g


def scaled_grad(cost: LocalCost, r_i: float, x) -> np.ndarray:
    """Gradient of ``f_i / r_i``."""
    if not r_i > 0:
        raise ValueError(f"r_i must be positive, got {r_i}")
    return grad_local(cost, x) / r_i


def global_grad(p: Problem, x) -> np.ndarray:
    return sum(grad_local(c, x) for c in p.costs)


def _atoms_cancel(p: Problem) -> bool:
    # group atoms by exact direction; every group's coefficient sum must vanish
    for kind in ("exp_atoms", "sin_atoms"):
        groups: dict[bytes, float] = {}
        for cost in p.costs:
            for a, e in getattr(cost, kind):
                key = e.tobytes()
                groups[key] = groups.get(key, 0.0) + a
        if any(abs(v) > CANCEL_TOL for v in groups.values()):
            return False
    return True


def strong_convexity_mu(p: Problem, samples: int = 4000, seed: int = 0) -> float:
    """Strong-convexity modulus of the global cost.

    Exact when the exponential and sine atoms cancel across agents; otherwise
    the minimum Hessian eigenvalue over ``samples`` uniform box points (an
    estimate, logged as such).
    """
    mu, _ = _mu_with_method(p, samples, seed)
    return mu


def _mu_with_method(p: Problem, samples: int, seed: int):
    Hsum = sum(c.H for c in p.costs)
    if _atoms_cancel(p):
        mu = float(np.linalg.eigvalsh(Hsum)[0])
        method = "exact"
    else:
        rng = np.random.default_rng(seed)
        B = p.box_halfwidth
        pts = rng.uniform(-B, B, size=(samples, p.m))
        mu = min(float(np.linalg.eigvalsh(p.hessian(x))[0]) for x in pts)
        method = f"sampled({samples})"
        log.warning("global Hessian has non-cancelling atoms; mu=%g is a sampled estimate over %d points", mu, samples)
    if mu <= MU_FLOOR:
        raise ConvexityError(f"global cost is not strongly convex (mu={mu:g})")
    return mu, method


def lipschitz_bound(cost: LocalCost, box_halfwidth: float) -> float:
    """Upper bound on the Hessian spectral norm of ``cost`` over ``[-B, B]^m``."""
    B = float(box_halfwidth)
    bound = np.linalg.norm(cost.H, 2)
    for a, e in cost.exp_atoms:
        bound += abs(a) * (e @ e) * np.exp(B * np.abs(e).sum())
    for b, s in cost.sin_atoms:
        bound += abs(b) * (s @ s)
    return float(bound)


def constants(p: Problem, samples: int = 4000, seed: int = 0) -> Constants:
    mu, method = _mu_with_method(p, samples, seed)
    l = np.array([lipschitz_bound(c, p.box_halfwidth) for c in p.costs])
    return Constants(mu=mu, l=l, mu_method=method)


def solve_centralized(p: Problem, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Minimize the global cost by damped Newton from the origin."""
    x = np.zeros(p.m)
    fx = p.value(x)
    for _ in range(max_iter):
        g = global_grad(p, x)
        if np.linalg.norm(g) <= tol:
            return x
        d = -np.linalg.solve(p.hessian(x), g)
        t = 1.0
        for _ in range(60):
            trial = x + t * d
            ft = p.value(trial)
            if ft <= fx:
                break
            t *= 0.5
        x, fx = trial, ft
    if np.linalg.norm(global_grad(p, x)) <= tol:
        return x
    raise NewtonError(f"Newton iteration did not reach |grad| <= {tol:g} in {max_iter} steps")


def kkt_residual(p: Problem, sd, gamma: float, x, z):
    """Equilibrium residuals ``(|gamma grad fbar(x) + L z|, |L x|)``."""
    X = np.reshape(x, (p.N, p.m))
    Z = np.reshape(z, (p.N, p.m))
    G = p.packed.stacked_grad(X) / sd.r[:, None]
    first = gamma * G + sd.L @ Z
    return float(np.linalg.norm(first)), float(np.linalg.norm(sd.L @ X))


def load_problem(path) -> Problem:
    """Read a problem file (YAML or JSON).

    Keys: ``box_halfwidth`` and ``agents``, a list of mappings with ``H``
    (row-major flat list or nested rows), ``c``, ``exp_atoms`` and
    ``sin_atoms`` (lists of ``{coef, dir}``).
    """
    import yaml

    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return problem_from_dict(doc, name=str(path))


def problem_from_dict(doc, name="") -> Problem:
    if not isinstance(doc, dict):
        raise ValueError("problem document must be a mapping")
    unknown = set(doc) - {"agents", "box_halfwidth", "name"}
    if unknown:
        raise ValueError(f"unknown keys in problem document: {sorted(unknown)}")
    costs = []
    for k, agent in enumerate(doc["agents"]):
        extra = set(agent) - {"H", "c", "exp_atoms", "sin_atoms"}
        if extra:
            raise ValueError(f"agent {k}: unknown keys {sorted(extra)}")
        H = np.asarray(agent["H"], dtype=float)
        if H.ndim == 1:
            m = int(round(np.sqrt(H.size)))
            if m * m != H.size:
                raise ValueError(f"agent {k}: flat H of length {H.size} is not square")
            H = H.reshape(m, m)
        costs.append(LocalCost(
            H=H,
            c=agent.get("c"),
            exp_atoms=[(a["coef"], a["dir"]) for a in agent.get("exp_atoms", [])],
            sin_atoms=[(a["coef"], a["dir"]) for a in agent.get("sin_atoms", [])],
        ))
    return Problem(costs, box_halfwidth=doc.get("box_halfwidth", 5.0), name=doc.get("name", name))


def problem_to_dict(p: Problem) -> dict:
    return {
        "name": p.name,
        "box_halfwidth": p.box_halfwidth,
        "agents": [
            {
                "H": c.H.ravel().tolist(),
                "c": c.c.tolist(),
                "exp_atoms": [{"coef": a, "dir": e.tolist()} for a, e in c.exp_atoms],
                "sin_atoms": [{"coef": b, "dir": s.tolist()} for b, s in c.sin_atoms],
            }
            for c in p.costs
        ],
    }
