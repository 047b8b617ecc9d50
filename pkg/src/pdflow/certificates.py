"""Dissipativity certificates for the primal-dual flow.

The storage function is ``V = 1/2 eta' P eta`` with
``P = [[p1, p2], [p2, 1]] kron R kron I_m`` and the gain-tied choice
``p2 = alpha/2``, ``p1 = alpha^2/2 - beta``.  From it follow the largest
certified cost gain ``gamma``, the connectivity a graph needs for a given
``gamma``, and a certified exponential decay rate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .costs import Constants, Problem
from .digraph import SpectralData
from .dynamics import (
    Gains, State, Trajectory, delta_map, split, storage_values,
)

EIG_FLOOR = 1e-12


class GainConditionError(ValueError):
    """alpha^2 <= 4 beta: no positive-definite gain-tied storage function exists."""


class TieConstraintError(ValueError):
    """``alpha p2 - beta != p1``."""


class FitWindowError(ValueError):
    """The storage function never enters the fitting window."""


@dataclass(frozen=True)
class PMPair:
    """Storage template ``[[p1, p2], [p2, 1]]`` and the matrix ``M`` tied to the gains."""

    alpha: float
    beta: float
    p1: float
    p2: float

    @property
    def P(self) -> np.ndarray:
        return np.array([[self.p1, self.p2], [self.p2, 1.0]])

    @property
    def M(self) -> np.ndarray:
        return np.array([[self.alpha * self.p1 - self.beta * self.p2, self.p1], [self.p1, self.p2]])

    @property
    def lam_min_M(self) -> float:
        return float(np.linalg.eigvalsh(self.M)[0])

    @property
    def lam_min_P_template(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[0])

    def lam_max_P(self, sd: SpectralData) -> float:
        """Largest eigenvalue of the full weighted ``P kron R kron I``."""
        return float(np.linalg.eigvalsh(self.P)[-1] * sd.r.max())


def build_pm(alpha: float, beta: float) -> PMPair:
    """Gain-tied storage parameters; requires ``alpha^2 > 4 beta``."""
    if not alpha * alpha > 4.0 * beta:
        raise GainConditionError(f"alpha^2 = {alpha * alpha:g} must exceed 4 beta = {4 * beta:g}")
    p2 = alpha / 2.0
    pm = PMPair(alpha=float(alpha), beta=float(beta), p1=alpha * p2 - beta, p2=p2)
    if pm.lam_min_P_template <= EIG_FLOOR or pm.lam_min_M <= EIG_FLOOR:
        raise GainConditionError("P or M is not numerically positive definite; alpha^2 - 4 beta is too small")
    return pm


def storage(s: State, eq: State, pm: PMPair, sd: SpectralData) -> float:
    e = s - eq
    return float(storage_values(sd.r, pm.p1, pm.p2, e.x, e.z))


def storage_rate(s: State, eq: State, pm: PMPair, sd: SpectralData, g: Gains, p: Problem) -> float:
    """Analytic time derivative ``eta' P eta_dot`` of the storage along the flow."""
    from .dynamics import vector_field

    e = s - eq
    d = vector_field(s, g, sd, p)
    return float(_storage_rate(sd.r, pm, e.x, e.z, d.x, d.z))


def _storage_rate(r, pm, Xt, Zt, dX, dZ):
    a = pm.p1 * Xt + pm.p2 * Zt
    b = pm.p2 * Xt + Zt
    return np.einsum("i,...ik,...ik->...", r, a, dX) + np.einsum("i,...ik,...ik->...", r, b, dZ)


def q_matrix(g: Gains, pm: PMPair, sd: SpectralData, m: int = 1) -> np.ndarray:
    """Dissipation matrix ``Q`` with ``V_dot = -1/2 eta' Q eta`` when ``gamma = 0``.

    Assembled block by block from the gains; under the tie constraint it
    equals ``M kron (L'R + RL) kron I_m``.
    """
    tie = g.alpha * pm.p2 - g.beta
    if abs(tie - pm.p1) > 1e-12 * max(1.0, abs(pm.p1)):
        raise TieConstraintError(f"alpha p2 - beta = {tie:g} differs from p1 = {pm.p1:g}")
    I = np.eye(m)
    RL = np.kron(sd.r[:, None] * sd.L, I)
    LR = RL.T
    Lt = RL + LR
    return np.block([
        [(g.alpha * pm.p1 - g.beta * pm.p2) * Lt, tie * LR + pm.p1 * RL],
        [tie * RL + pm.p1 * LR, pm.p2 * Lt],
    ])


# ---------------------------------------------------------------------------
# inequality checks

def default_delta(pm: PMPair, consts: Constants) -> float:
    """Young's-inequality weight used by the gamma bound: ``p1 mu / (4 p2 lbar^2)``."""
    return pm.p1 * consts.mu / (4.0 * pm.p2 * consts.lbar ** 2)


@dataclass
class DissipationReport:
    max_violation: float
    max_relative_violation: float
    worst_index: int
    vdot: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)


def _flow_batch(p: Problem, sd: SpectralData, g: Gains, X, Z):
    LX = np.einsum("ij,...jk->...ik", sd.L, X)
    LZ = np.einsum("ij,...jk->...ik", sd.L, Z)
    dX = -LZ - g.alpha * LX
    if g.gamma:
        dX = dX - g.gamma * p.packed.stacked_grad(X) / sd.r[:, None]
    return dX, g.beta * LX


def dissipation_terms(p, sd, g, pm, X, Z, eq: State, delta: float):
    """``(V_dot, rhs)`` of the subsystem dissipation inequality at states (..., N, m)."""
    Xt, Zt = X - eq.x, Z - eq.z
    dX, dZ = _flow_batch(p, sd, g, X, Z)
    vdot = _storage_rate(sd.r, pm, Xt, Zt, dX, dZ)
    k = pm.lam_min_M * sd.rho * sd.rmin
    _, yperp = split(sd, Xt)
    _, zperp = split(sd, Zt)
    Ru = -sd.r[:, None] * delta_map(p, sd, eq.x, Xt)
    rhs = (
        -k * np.einsum("...ik,...ik->...", yperp, yperp)
        - (k - pm.p2 * g.gamma / (2.0 * delta)) * np.einsum("...ik,...ik->...", zperp, zperp)
        + pm.p1 * g.gamma * np.einsum("...ik,...ik->...", Xt, Ru)
        + 0.5 * delta * pm.p2 * g.gamma * np.einsum("...ik,...ik->...", Ru, Ru)
    )
    return vdot, rhs


def check_dissipation(traj: Trajectory, pm: PMPair, sd: SpectralData, g: Gains, p: Problem,
                      delta: float | None = None, consts: Constants | None = None) -> DissipationReport:
    """Evaluate ``V_dot <= rhs`` at every recorded state.

    ``delta`` defaults to `default_delta`, which needs ``consts``.
    """
    if delta is None:
        if consts is None:
            raise ValueError("either delta or consts is required")
        delta = default_delta(pm, consts)
    vdot, rhs = dissipation_terms(p, sd, g, pm, traj.X, traj.Z, traj.equilibrium, delta)
    viol = vdot - rhs
    rel = viol / (1.0 + np.abs(rhs))
    k = int(np.argmax(rel))
    return DissipationReport(float(viol.max()), float(rel[k]), k, vdot, rhs)


@dataclass
class SectorReport:
    """Minimum slacks of the gradient-feedback bounds over the sample set.

    ``min_slack_sector`` uses the global modulus ``mu`` exactly as the sector
    bound is usually stated; ``min_slack_sector_stacked`` uses ``mu / N``.
    ``min_slack_growth`` is the quadratic growth bound on ``|R Delta|``.
    """

    n_samples: int
    min_slack_sector: float
    min_slack_sector_stacked: float
    min_slack_growth: float
    worst_sector: np.ndarray = field(repr=False)

    @property
    def ok(self) -> bool:
        return min(self.min_slack_sector, self.min_slack_growth) >= -1e-9


def sector_samples(p: Problem, eq_x, samples: int, seed: int = 0) -> np.ndarray:
    """Error samples ``y_tilde`` with ``y_tilde + y*`` in the box.

    Uniform draws, axis-aligned extremes of each agent's coordinates, and
    consensus points pushed toward the box boundary along the coordinate
    axes, the all-ones direction and the softest direction of the global
    Hessian.
    """
    N, m, B = p.N, p.m, p.box_halfwidth
    Ys = np.reshape(eq_x, (N, m))
    rng = np.random.default_rng(seed)
    pts = [rng.uniform(-B, B, size=(samples, N, m))]

    axis = np.repeat(Ys[None], 2 * N * m, axis=0)
    for j in range(N * m):
        i, k = divmod(j, m)
        axis[2 * j, i, k] = B
        axis[2 * j + 1, i, k] = -B
    pts.append(axis)

    xs = Ys.mean(axis=0)
    dirs = [np.eye(m)[k] for k in range(m)] + [np.ones(m)]
    dirs.append(np.linalg.eigh(p.hessian(xs))[1][:, 0])
    cons = []
    for v in dirs:
        for sgn in (1.0, -1.0):
            d = sgn * v
            # largest t with xs + t d inside the box
            with np.errstate(divide="ignore"):
                lim = np.where(d > 0, (B - xs) / d, np.where(d < 0, (-B - xs) / d, np.inf))
            tmax = float(lim.min())
            for frac in (1.0, 0.5, 0.1, 0.01):
                cons.append(np.tile(xs + frac * tmax * d, (N, 1)))
    pts.append(np.array(cons))
    return np.concatenate(pts) - Ys


def check_sector(p: Problem, sd: SpectralData, eq_x, consts: Constants,
                 samples: int = 10_000, seed: int = 0) -> SectorReport:
    """Sample the sector and growth bounds of the gradient-difference map."""
    Ys = np.reshape(eq_x, (p.N, p.m))
    Yt = sector_samples(p, Ys, samples, seed)
    RD = sd.r[:, None] * delta_map(p, sd, Ys, Yt)
    inner = np.einsum("sik,sik->s", Yt, RD)
    ybar, yperp = split(sd, Yt)
    nbar = np.einsum("sik,sik->s", ybar, ybar)
    nperp = np.einsum("sik,sik->s", yperp, yperp)
    mu, lbar = consts.mu, consts.lbar

    def sector(mu_):
        return inner - (0.5 * mu_ * nbar - (lbar + 2.0 * lbar ** 2 / mu_) * nperp)

    s_paper = sector(mu)
    s_stacked = sector(mu / p.N)
    growth = 2.0 * lbar ** 2 * (nbar + nperp) - np.einsum("sik,sik->s", RD, RD)
    return SectorReport(
        n_samples=len(Yt),
        min_slack_sector=float(s_paper.min()),
        min_slack_sector_stacked=float(s_stacked.min()),
        min_slack_growth=float(growth.min()),
        worst_sector=Yt[int(np.argmin(s_paper))],
    )


# ---------------------------------------------------------------------------
# gain and graph synthesis

def gamma_branches(pm: PMPair, sd: SpectralData, consts: Constants):
    """The two upper bounds on ``gamma`` whose minimum is certified."""
    k = pm.lam_min_M * sd.rho * sd.rmin
    mu, lbar = consts.mu, consts.lbar
    b1 = k * pm.p1 * mu / (2.0 * pm.p2 ** 2 * lbar ** 2)
    b2 = 4.0 * k * mu / (pm.p1 * mu ** 2 + 4.0 * pm.p1 * (lbar * mu + 2.0 * lbar ** 2))
    return b1, b2


def gamma_max(pm: PMPair, sd: SpectralData, consts: Constants) -> float:
    """Supremum of certified ``gamma``; any smaller positive gain is certified."""
    return min(gamma_branches(pm, sd, consts))


def connectivity_thresholds(g: Gains, pm: PMPair, consts: Constants):
    lam = pm.lam_min_M
    mu, lbar = consts.mu, consts.lbar
    t1 = 2.0 * pm.p2 ** 2 * g.gamma * lbar ** 2 / (pm.p1 * mu * lam)
    t2 = pm.p1 * g.gamma / lam * (mu / 4.0 + (lbar * mu + 2.0 * lbar ** 2) / mu)
    return t1, t2


def required_connectivity(g: Gains, pm: PMPair, consts: Constants) -> float:
    """Value ``rho * r_min`` must exceed for ``g.gamma`` to be certified."""
    return max(connectivity_thresholds(g, pm, consts))


def required_scale(g: Gains, pm: PMPair, sd: SpectralData, consts: Constants) -> float:
    """Uniform weight scaling that brings ``rho * r_min`` up to the requirement.

    ``r`` is scale-invariant and ``rho`` is linear in the scale, so the
    scaled graph sits exactly on the boundary; multiply by a margin > 1
    before using it.
    """
    return required_connectivity(g, pm, consts) / sd.rho_rmin


def decay_coefficients(g: Gains, pm: PMPair, sd: SpectralData, consts: Constants, delta: float | None = None):
    """Coefficients of ``|ybar|^2``, ``|y_perp|^2`` and ``|z_perp|^2`` in the decay bound on ``V_dot``."""
    delta = default_delta(pm, consts) if delta is None else delta
    k = pm.lam_min_M * sd.rho * sd.rmin
    mu, lbar, gam = consts.mu, consts.lbar, g.gamma
    c_bar = pm.p1 * gam * mu / 2.0 - delta * pm.p2 * gam * lbar ** 2
    c_perp = k - pm.p1 * gam * (lbar + 2.0 * lbar ** 2 / mu) - delta * pm.p2 * gam * lbar ** 2
    c_z = k - pm.p2 * gam / (2.0 * delta)
    return c_bar, c_perp, c_z


def delta_tilde(g, pm, sd, consts, delta=None) -> float:
    c_bar, c_perp, c_z = decay_coefficients(g, pm, sd, consts, delta)
    return min(c_bar / 2.0, c_perp / 2.0, c_z)


def certified_rate(g, pm, sd, consts, delta=None) -> float:
    """Certified exponential rate of V (negative when decaying): ``-2 delta_tilde / lambda_max(P)``."""
    return -2.0 * delta_tilde(g, pm, sd, consts, delta) / pm.lam_max_P(sd)


def fit_log_linear(t, y):
    """Least-squares slope, intercept and R^2 of ``log y`` against ``t``."""
    t = np.asarray(t, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(t, ly, 1)
    resid = ly - (slope * t + intercept)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def rate_window(traj: Trajectory, lo: float = 1e-10, hi: float = 1e-2) -> np.ndarray:
    V = traj.obs["V"]
    w = (V >= lo) & (V <= hi)
    if w.sum() < 3:
        raise FitWindowError(f"V has {int(w.sum())} records in [{lo:g}, {hi:g}]; need at least 3")
    return w


def rate_estimate(traj: Trajectory, pm: PMPair, sd: SpectralData, consts: Constants,
                  window=(1e-10, 1e-2)):
    """``(fitted, certified)`` exponential rates of V.

    ``fitted`` is the least-squares slope of ``log V`` over the records with
    V inside ``window``.
    """
    w = rate_window(traj, *window)
    fitted, _, _ = fit_log_linear(traj.times[w], traj.obs["V"][w])
    return fitted, certified_rate(traj.gains, pm, sd, consts)


# ---------------------------------------------------------------------------
# report

@dataclass
class CertificateReport:
    alpha: float
    beta: float
    gamma: float
    feasible: bool
    margins: dict
    rho: float
    rmin: float
    rho_rmin: float
    mu: float
    lbar: float
    p1: float | None = None
    p2: float | None = None
    lam_min_M: float | None = None
    lam_max_P: float | None = None
    gamma_max: float | None = None
    gamma_branches: tuple | None = None
    gamma_binding: int | None = None
    rho_required: float | None = None
    scale_required: float | None = None
    delta_choice: float | None = None
    delta_tilde: float | None = None
    decay_rate: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["gamma_branches"] is not None:
            d["gamma_branches"] = list(d["gamma_branches"])
        return d


def certify(g: Gains, sd: SpectralData, consts: Constants) -> CertificateReport:
    """Evaluate every certificate condition for the gains on the given graph."""
    base = dict(alpha=g.alpha, beta=g.beta, gamma=g.gamma, rho=sd.rho, rmin=sd.rmin,
                rho_rmin=sd.rho_rmin, mu=consts.mu, lbar=consts.lbar)
    gain_margin = g.alpha ** 2 - 4.0 * g.beta
    try:
        pm = build_pm(g.alpha, g.beta)
    except GainConditionError:
        return CertificateReport(feasible=False, margins={"gain_condition": gain_margin}, **base)

    branches = gamma_branches(pm, sd, consts)
    gmax = min(branches)
    need = required_connectivity(g, pm, consts)
    delta = default_delta(pm, consts)
    c_bar, c_perp, c_z = decay_coefficients(g, pm, sd, consts, delta)
    dt = min(c_bar / 2.0, c_perp / 2.0, c_z)
    margins = {
        "gain_condition": gain_margin,
        "gamma": gmax - g.gamma,
        "connectivity": sd.rho_rmin - need,
        "coef_ybar": c_bar,
        "coef_yperp": c_perp,
        "coef_zperp": c_z,
    }
    return CertificateReport(
        feasible=all(v >= 0 for v in margins.values()),
        margins=margins,
        p1=pm.p1, p2=pm.p2, lam_min_M=pm.lam_min_M, lam_max_P=pm.lam_max_P(sd),
        gamma_max=gmax, gamma_branches=branches, gamma_binding=int(np.argmin(branches)),
        rho_required=need, scale_required=need / sd.rho_rmin,
        delta_choice=delta, delta_tilde=dt, decay_rate=-2.0 * dt / pm.lam_max_P(sd),
        **base,
    )
