"""The distributed primal-dual flow and its numerical integration.

States are stored agent-major as arrays of shape (N, m); the stacked vector
of length N*m is ``X.ravel()``.  The stacked Laplacian ``L kron I_m`` is
applied as ``L @ X`` and never formed explicitly, except by the dense
helpers (`linear_block`, `projectors`, `jacobian`) used for analysis.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from ._backend import BACKEND, kernels
from .costs import Problem, solve_centralized
from .digraph import SpectralData

log = logging.getLogger(__name__)

METHODS = ("rk4", "rk45", "lsoda")


@dataclass(frozen=True)
class Gains:
    """Algorithm gains: consensus damping ``alpha``, dual rate ``beta``, cost weight ``gamma``."""

    alpha: float
    beta: float
    gamma: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")


@dataclass(frozen=True, eq=False)
class State:
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        z = np.array(self.z, dtype=float)
        if x.ndim != 2 or x.shape != z.shape:
            raise ValueError(f"x and z must both have shape (N, m), got {x.shape} and {z.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def eta(self) -> np.ndarray:
        """Stacked ``(x, z)`` vector of length 2*N*m."""
        return np.concatenate([self.x.ravel(), self.z.ravel()])

    @classmethod
    def from_eta(cls, eta, N, m):
        eta = np.asarray(eta, dtype=float)
        return cls(eta[: N * m].reshape(N, m), eta[N * m:].reshape(N, m))

    def __sub__(self, other: "State") -> "State":
        return State(self.x - other.x, self.z - other.z)


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration settings.

    ``method`` is ``"rk4"`` (fixed step ``dt``), ``"rk45"`` (adaptive
    Dormand-Prince) or ``"lsoda"`` (stiff/non-stiff switching with the
    analytic Jacobian, needed for the very slow or very stiff regimes that
    the certified gains and scalings produce).  The adaptive methods record
    every accepted step; ``record_stride`` decimates records in all methods.
    """

    method: str = "rk4"
    dt: float = 1e-3
    T: float = 20.0
    record_stride: int = 1
    rtol: float = 1e-8
    atol: float = 1e-12
    blowup: float = 1e9

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("dt and T must be positive")
        if int(self.record_stride) < 1:
            raise ValueError("record_stride must be >= 1")


@dataclass(eq=False)
class Trajectory:
    """Recorded states and derived observables.

    ``X`` and ``Z`` have shape (n_records, N, m).  ``obs`` holds per-record
    arrays ``f_x``, ``xLx``, ``zLz``, ``V``, ``err_norm`` and ``z_avg``
    (the r-weighted dual average, shape (n_records, m)).
    """

    times: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    obs: dict
    equilibrium: State
    gains: Gains
    diverged: bool = False
    blowup_time: float | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def state(self, k) -> State:
        return State(self.X[k], self.Z[k])

    def converged(self, tol: float = 1e-6) -> bool:
        return (not self.diverged) and bool(self.obs["err_norm"][-1] < tol)

    @property
    def final(self) -> State:
        return self.state(-1)


# ---------------------------------------------------------------------------
# the flow

def _kernel_args(p: Problem, sd: SpectralData, g: Gains):
    pc = p.packed
    return (
        np.ascontiguousarray(sd.L), np.ascontiguousarray(1.0 / sd.r),
        float(g.alpha), float(g.beta), float(g.gamma),
        pc.H, pc.c, pc.exp_agent, pc.exp_coef, pc.exp_dir,
        pc.sin_agent, pc.sin_coef, pc.sin_dir,
    )


def vector_field(s: State, g: Gains, sd: SpectralData, p: Problem) -> State:
    """Time derivative ``(-gamma grad fbar(x) - L z - alpha L x, beta L x)``."""
    dX, dZ = kernels.vector_field(*_kernel_args(p, sd, g), s.x, s.z)
    return State(dX, dZ)


def linear_block(g: Gains, sd: SpectralData, m: int = 1) -> np.ndarray:
    """Dense ``[[-alpha L, -L], [beta L, 0]]`` with ``L = L_G kron I_m``."""
    Lb = np.kron(sd.L, np.eye(m))
    return np.block([[-g.alpha * Lb, -Lb], [g.beta * Lb, np.zeros_like(Lb)]])


def jacobian(s: State, g: Gains, sd: SpectralData, p: Problem) -> np.ndarray:
    """Jacobian of the flow at ``s``."""
    N, m = s.x.shape
    A = linear_block(g, sd, m)
    if g.gamma:
        Hs = p.packed.stacked_hessian(s.x) / sd.r[:, None, None]
        for i in range(N):
            A[i * m:(i + 1) * m, i * m:(i + 1) * m] -= g.gamma * Hs[i]
    return A


def delta_map(p: Problem, sd: SpectralData, y_star, y_tilde) -> np.ndarray:
    """Gradient-difference nonlinearity ``grad fbar(y_tilde + y_star) - grad fbar(y_star)``.

    ``y_tilde`` is a stacked vector, an (N, m) array or a batch (..., N, m).
    """
    Ys = np.reshape(y_star, (p.N, p.m))
    Yt = np.asarray(y_tilde, dtype=float)
    if Yt.shape[-2:] != (p.N, p.m):
        Yt = Yt.reshape(p.N, p.m)
    pc = p.packed
    D = (pc.stacked_grad(Yt + Ys) - pc.stacked_grad(Ys)) / sd.r[:, None]
    return D.reshape(np.shape(y_tilde))


def projectors(sd: SpectralData, m: int = 1):
    """Dense weighted-average projector ``(1 r') kron I_m`` and its complement."""
    Pi = np.kron(np.outer(np.ones(sd.n), sd.r), np.eye(m))
    return Pi, np.eye(sd.n * m) - Pi


def split(sd: SpectralData, X):
    """Blockwise ``(Pi X, Pi_perp X)`` for X of shape (..., N, m)."""
    X = np.asarray(X)
    avg = np.einsum("i,...ik->...k", sd.r, X)
    bar = np.broadcast_to(avg[..., None, :], X.shape)
    return bar, X - bar


# ---------------------------------------------------------------------------
# equilibria and initial conditions

def dual_equilibrium(p: Problem, sd: SpectralData, gamma: float, x_star, z0) -> np.ndarray:
    """Dual equilibrium reachable from ``z0``.

    Solves ``L z* = -gamma grad fbar(1 x*)`` together with
    ``r' z* = r' z0`` (the conserved dual average), which fixes ``z*``.
    """
    X = np.tile(np.asarray(x_star, dtype=float), (p.N, 1))
    G = p.packed.stacked_grad(X) / sd.r[:, None]
    K = np.vstack([sd.L, sd.r[None, :]])
    rhs = np.vstack([-gamma * G, sd.r @ np.asarray(z0)])
    Zs, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return Zs


def equilibrium(p: Problem, sd: SpectralData, g: Gains, s0: State) -> State:
    """Equilibrium the flow converges to from ``s0`` (when it converges).

    With ``gamma > 0`` the primal part is the consensus optimum; with
    ``gamma = 0`` there is no cost and the conserved weighted average of
    ``x(0)`` is the limit instead.
    """
    if g.gamma > 0:
        x_star = solve_centralized(p)
    else:
        x_star = sd.r @ s0.x
    return State(np.tile(x_star, (p.N, 1)), dual_equilibrium(p, sd, g.gamma, x_star, s0.z))


def initial_state(p: Problem, seed: int = 0, halfwidth: float | None = None) -> State:
    """x(0) uniform in the box (or ``[-halfwidth, halfwidth]``), z(0) = 0."""
    B = p.box_halfwidth if halfwidth is None else float(halfwidth)
    rng = np.random.default_rng(seed)
    return State(rng.uniform(-B, B, size=(p.N, p.m)), np.zeros((p.N, p.m)))


def slowest_rate(p: Problem, sd: SpectralData, g: Gains, eq: State) -> float:
    """Slowest decay rate of the linearization at ``eq``, conserved directions excluded."""
    ev = np.linalg.eigvals(jacobian(eq, g, sd, p))
    ev = ev[np.argsort(np.abs(ev))]
    n_conserved = p.m if g.gamma > 0 else 2 * p.m
    return float(np.min(-ev[n_conserved:].real))


def auto_horizon(p, sd, g, s0, eq=None, err_end=1e-8, safety=1.25, fallback=100.0) -> float:
    """Horizon long enough for the linearized error to fall to ``err_end``."""
    eq = equilibrium(p, sd, g, s0) if eq is None else eq
    rate = slowest_rate(p, sd, g, eq)
    if not rate > 0:
        return fallback
    e0 = max(np.linalg.norm((s0 - eq).eta), 1.0)
    return safety * np.log(e0 / err_end) / rate


# ---------------------------------------------------------------------------
# integration

def storage_template(g: Gains):
    """``(p1, p2)`` of the gain-tied storage function, or None if alpha^2 <= 4 beta."""
    if g.alpha * g.alpha > 4.0 * g.beta:
        p2 = g.alpha / 2.0
        return g.alpha * p2 - g.beta, p2
    return None


def storage_values(r, p1, p2, Xt, Zt) -> np.ndarray:
    """``1/2 eta' (P kron R kron I) eta`` for error stacks of shape (..., N, m)."""
    xx = np.einsum("i,...ik,...ik->...", r, Xt, Xt)
    xz = np.einsum("i,...ik,...ik->...", r, Xt, Zt)
    zz = np.einsum("i,...ik,...ik->...", r, Zt, Zt)
    return 0.5 * (p1 * xx + 2.0 * p2 * xz + zz)


def stacked_values(p: Problem, Xs) -> np.ndarray:
    """``sum_i f_i(x_i)`` for each stack in ``Xs`` of shape (T, N, m)."""
    pc = p.packed
    v = 0.5 * np.einsum("tik,ikl,til->t", Xs, pc.H, Xs) + np.einsum("ik,tik->t", pc.c, Xs)
    if pc.exp_coef.size:
        v += np.exp(np.einsum("qk,tqk->tq", pc.exp_dir, Xs[:, pc.exp_agent])) @ pc.exp_coef
    if pc.sin_coef.size:
        v += np.sin(np.einsum("qk,tqk->tq", pc.sin_dir, Xs[:, pc.sin_agent])) @ pc.sin_coef
    return v


def observables(p: Problem, sd: SpectralData, g: Gains, eq: State, X, Z) -> dict:
    with np.errstate(over="ignore", invalid="ignore"):
        Xt, Zt = X - eq.x, Z - eq.z
        tmpl = storage_template(g)
        V = storage_values(sd.r, *tmpl, Xt, Zt) if tmpl else np.full(X.shape[0], np.nan)
        return {
            "f_x": stacked_values(p, X),
            "xLx": np.einsum("tik,ij,tjk->t", X, sd.L, X),
            "zLz": np.einsum("tik,ij,tjk->t", Z, sd.L, Z),
            "V": V,
            "err_norm": np.sqrt(np.einsum("tik,tik->t", Xt, Xt)),
            "z_avg": np.einsum("i,tik->tk", sd.r, Z),
        }


def integrate(p: Problem, sd: SpectralData, g: Gains, s0: State,
              cfg: IntegratorConfig = IntegratorConfig(), eq: State | None = None) -> Trajectory:
    """Integrate the flow from ``s0``.

    A non-finite state or a state norm above ``cfg.blowup`` stops the run;
    the trajectory is returned with ``diverged=True`` and the blow-up time.
    """
    if s0.x.shape != (p.N, p.m):
        raise ValueError(f"initial state has shape {s0.x.shape}, expected {(p.N, p.m)}")
    if not (np.all(np.isfinite(s0.x)) and np.all(np.isfinite(s0.z))):
        raise ValueError("initial state must be finite")
    eq = equilibrium(p, sd, g, s0) if eq is None else eq
    args = _kernel_args(p, sd, g)
    stride = int(cfg.record_stride)

    if cfg.method == "rk4":
        n_steps = int(np.ceil(cfg.T / cfg.dt - 1e-9))
        X, Z, steps, status, stop = kernels.rk4(*args, s0.x, s0.z, cfg.dt, n_steps, stride, cfg.blowup)
        times = steps * cfg.dt
        diverged = status != 0
        blowup_time = stop * cfg.dt if diverged else None
    else:
        times, X, Z, diverged, blowup_time = _integrate_adaptive(p, sd, g, s0, cfg, args)

    traj = Trajectory(
        times=np.asarray(times, dtype=float), X=X, Z=Z,
        obs=observables(p, sd, g, eq, X, Z),
        equilibrium=eq, gains=g, diverged=diverged, blowup_time=blowup_time,
        meta={"method": cfg.method, "dt": cfg.dt, "T": cfg.T, "backend": BACKEND},
    )
    if diverged:
        log.info("run diverged at t=%g", blowup_time)
    return traj


def _integrate_adaptive(p, sd, g, s0, cfg, args):
    N, m = p.N, p.m
    n = N * m

    def fun(t, y):
        dX, dZ = kernels.vector_field(*args, y[:n].reshape(N, m), y[n:].reshape(N, m))
        return np.concatenate([dX.ravel(), dZ.ravel()])

    def jac(t, y):
        return jacobian(State.from_eta(y, N, m), g, sd, p)

    def blowup(t, y):
        nrm = np.linalg.norm(y)
        return cfg.blowup - nrm if np.isfinite(nrm) else -1.0

    blowup.terminal = True
    method = {"rk45": "RK45", "lsoda": "LSODA"}[cfg.method]
    kw = {"jac": jac} if cfg.method == "lsoda" else {}
    with np.errstate(over="ignore", invalid="ignore"):
        sol = solve_ivp(fun, (0.0, cfg.T), s0.eta, method=method, rtol=cfg.rtol, atol=cfg.atol,
                        events=blowup, **kw)
    Y = sol.y.T
    t = sol.t
    finite = np.all(np.isfinite(Y), axis=1)
    diverged = sol.status != 0 or not finite.all()
    blowup_time = None
    if diverged:
        last = int(np.argmin(finite)) if not finite.all() else len(t)
        blowup_time = float(t[last] if last < len(t) else t[-1])
        t, Y = t[:last], Y[:last]
    keep = np.zeros(len(t), dtype=bool)
    keep[::cfg.record_stride] = True
    keep[-1] = True
    t, Y = t[keep], Y[keep]
    return t, Y[:, :n].reshape(-1, N, m), Y[:, n:].reshape(-1, N, m), diverged, blowup_time


# ---------------------------------------------------------------------------
# CSV

OBS_COLUMNS = ("V", "f_x", "xLx", "zLz", "err_norm")


def csv_header(N: int, m: int) -> list:
    cols = ["t"]
    cols += [f"x_{i + 1}_{k + 1}" for i in range(N) for k in range(m)]
    cols += [f"z_{i + 1}_{k + 1}" for i in range(N) for k in range(m)]
    return cols + list(OBS_COLUMNS)


def write_csv(traj: Trajectory, path) -> None:
    T, N, m = traj.X.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(N, m))
        obs = np.column_stack([traj.obs[k] for k in OBS_COLUMNS])
        data = np.column_stack([traj.times, traj.X.reshape(T, -1), traj.Z.reshape(T, -1), obs])
        for row in data:
            w.writerow([repr(float(v)) for v in row])


def read_csv(path):
    """Return ``(times, X, Z)`` from a trajectory CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    xcols = [c for c in header if c.startswith("x_")]
    N = max(int(c.split("_")[1]) for c in xcols)
    m = max(int(c.split("_")[2]) for c in xcols)
    ix = [header.index(c) for c in xcols]
    iz = [header.index(c.replace("x_", "z_", 1)) for c in xcols]
    return body[:, 0], body[:, ix].reshape(-1, N, m), body[:, iz].reshape(-1, N, m)
