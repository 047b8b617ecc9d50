"""End-to-end acceptance checks on the canonical five-agent benchmark.

Each test records one PASS/FAIL line (printed in the terminal summary)
before asserting, so a red criterion still reports its measured values.
"""

import numpy as np
import pytest

from pdflow import certificates as C
from pdflow.costs import grad_local, kkt_residual, solve_centralized
from pdflow.digraph import scale, spectral_data
from pdflow.dynamics import Gains, IntegratorConfig, initial_state, integrate, projectors
from pdflow.harness import experiments as ex
from pdflow.harness.config import RunConfig

from .criteria import record_criterion

ALPHA, BETA = 5.0, 1.0
V_WINDOW = (1e-10, 1e-2)


def z_drift(traj):
    return float(np.max(np.abs(traj.obs["z_avg"] - traj.obs["z_avg"][0])))


def convergence_checks(traj):
    """Final error, per-step V increase and the log-error fit over the V window."""
    V = traj.obs["V"]
    w = C.rate_window(traj, *V_WINDOW)
    slope, _, r2 = C.fit_log_linear(traj.times[w], traj.obs["err_norm"][w])
    return {
        "final_err": float(traj.obs["err_norm"][-1]),
        "max_dV": float(np.max(np.diff(V))),
        "V_in_window": bool(w.any()),
        "slope": slope,
        "r2": r2,
    }


def convergence_ok(c):
    return (c["final_err"] < 1e-6 and c["max_dV"] <= 1e-10 and c["V_in_window"]
            and c["r2"] >= 0.99 and c["slope"] < 0)


def convergence_detail(c):
    return (f"err(T)={c['final_err']:.2e} max dV={c['max_dV']:.1e} "
            f"log-err slope={c['slope']:.3e} R2={c['r2']:.5f}")


@pytest.fixture(scope="module")
def consensus_runs(problem, sd):
    s0 = initial_state(problem, seed=0)
    cfg = IntegratorConfig(method="rk4", dt=1e-3, T=20.0)
    return {a: integrate(problem, sd, Gains(a, BETA, 0.0), s0, cfg) for a in (1.0, 5.0)}


@pytest.fixture(scope="module")
def certified_gamma_run():
    setup = ex.resolve(RunConfig(alpha=ALPHA, beta=BETA, gamma="certified", method="lsoda", T="auto"))
    return setup, ex.run(setup)


@pytest.fixture(scope="module")
def certified_scale_run():
    setup = ex.resolve(RunConfig(alpha=ALPHA, beta=BETA, gamma=0.5, graph_scale="certified",
                                 method="lsoda", T="auto"))
    return setup, ex.run(setup)


def test_criterion_01_consensus_regime(consensus_runs):
    fast, slow = consensus_runs[5.0], consensus_runs[1.0]
    xLx5, zLz5 = float(fast.obs["xLx"][-1]), float(fast.obs["zLz"][-1])
    min_xLx1 = float(np.min(slow.obs["xLx"]))
    ok5 = xLx5 < 1e-8 and zLz5 < 1e-8
    ok1 = min_xLx1 > 1e-3
    record_criterion(1, ok5 and ok1,
                     f"alpha=5: xLx(T)={xLx5:.2e} zLz(T)={zLz5:.2e} (< 1e-8 each); "
                     f"alpha=1: min xLx={min_xLx1:.2e} (> 1e-3)")
    assert ok1
    assert ok5


def test_criterion_02_certified_gamma(certified_gamma_run):
    setup, traj = certified_gamma_run
    c = convergence_checks(traj)
    ok = setup.gains.gamma > 0 and not traj.diverged and convergence_ok(c)
    record_criterion(2, ok, f"gamma={setup.gains.gamma:.3e} T={setup.T:.3e} " + convergence_detail(c))
    assert ok


def test_criterion_03_certified_scale(certified_scale_run, problem, sd, consts):
    setup, traj = certified_scale_run
    pm = C.build_pm(ALPHA, BETA)
    need = C.required_connectivity(setup.gains, pm, consts)
    s_req = C.required_scale(setup.gains, pm, sd, consts)
    c = convergence_checks(traj)
    feasible = C.certify(setup.gains, setup.sd, consts).feasible
    ok = feasible and not traj.diverged and convergence_ok(c)
    record_criterion(3, ok, f"required rho*rmin={need:.6g} scale={s_req:.6g} run at {setup.scale:.6g} "
                            + convergence_detail(c))
    assert ok


def test_criterion_04_rate_soundness(certified_gamma_run):
    setup, traj = certified_gamma_run
    fitted, certified = C.rate_estimate(traj, setup.pm, setup.sd, setup.consts, window=V_WINDOW)
    ok = fitted <= certified + 1e-3
    record_criterion(4, ok, f"fitted V rate={fitted:.4e} certified={certified:.4e}")
    assert ok


def test_criterion_05_dissipation(certified_gamma_run):
    setup, traj = certified_gamma_run
    rep = C.check_dissipation(traj, setup.pm, setup.sd, setup.gains, setup.problem, consts=setup.consts)
    ok = rep.max_relative_violation <= 1e-6
    record_criterion(5, ok, f"max relative violation={rep.max_relative_violation:.3e} "
                            f"(absolute {rep.max_violation:.3e}) over {len(traj)} records")
    assert ok


def test_criterion_06_sector(problem, sd, consts):
    x_star = np.tile(solve_centralized(problem), (problem.N, 1))
    rep = C.check_sector(problem, sd, x_star, consts, samples=10_000, seed=0)
    ok = rep.min_slack_sector >= -1e-9 and rep.min_slack_growth >= -1e-9
    record_criterion(6, ok, f"sector min slack={rep.min_slack_sector:.4g} growth min slack={rep.min_slack_growth:.4g} "
                            f"(sector with mu/N: {rep.min_slack_sector_stacked:.4g})")
    assert ok


def test_criterion_07_oracle(problem, certified_gamma_run):
    setup, traj = certified_gamma_run
    x_star = solve_centralized(problem)
    match = float(np.max(np.abs(traj.X[-1] - x_star)))
    kkt = kkt_residual(problem, setup.sd, setup.gains.gamma, traj.X[-1], traj.Z[-1])
    ok = np.linalg.norm(x_star) <= 1e-8 and match <= 1e-6 and max(kkt) <= 1e-6
    record_criterion(7, ok, f"|x*|={np.linalg.norm(x_star):.2e} consensus mismatch={match:.2e} "
                            f"kkt=({kkt[0]:.2e}, {kkt[1]:.2e})")
    assert ok


def test_criterion_08_conservation(consensus_runs, certified_gamma_run, certified_scale_run):
    drifts = {
        "alpha=1": z_drift(consensus_runs[1.0]),
        "alpha=5": z_drift(consensus_runs[5.0]),
        "certified gamma": z_drift(certified_gamma_run[1]),
        "certified scale": z_drift(certified_scale_run[1]),
    }
    ok = max(drifts.values()) <= 1e-9
    record_criterion(8, ok, " ".join(f"{k}: {v:.1e}" for k, v in drifts.items()))
    assert ok


def _rk4_ratio(problem, sd):
    g = Gains(ALPHA, BETA, 0.1)
    s0 = initial_state(problem, seed=0, halfwidth=1.0)
    T, dt = 1.0, 0.02

    def final(h):
        tr = integrate(problem, sd, g, s0, IntegratorConfig(method="rk4", dt=h, T=T))
        assert tr.times[-1] == pytest.approx(T)
        return np.concatenate([tr.X[-1].ravel(), tr.Z[-1].ravel()])

    ref = final(dt / 8)
    return np.linalg.norm(final(dt) - ref) / np.linalg.norm(final(dt / 2) - ref)


def test_criterion_09_structural(problem, graph, sd):
    rng = np.random.default_rng(0)
    h, fd_err = 1e-6, 0.0
    B = problem.box_halfwidth
    for cost in problem.costs:
        for x in rng.uniform(-B, B, size=(100, problem.m)):
            g = grad_local(cost, x)
            fd = np.array([(cost.value(x + h * e) - cost.value(x - h * e)) / (2 * h) for e in np.eye(problem.m)])
            fd_err = max(fd_err, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1.0))
    Pi, Pp = projectors(sd, problem.m)
    proj_err = max(np.max(np.abs(Pi @ Pi - Pi)), np.max(np.abs(Pi + Pp - np.eye(Pi.shape[0]))))
    rho_err = max(abs(spectral_data(scale(graph, s)).rho - s * sd.rho) / (s * sd.rho) for s in (2, 4))
    ratio = _rk4_ratio(problem, sd)
    ok = fd_err <= 1e-6 and proj_err <= 1e-12 and rho_err <= 1e-10 and abs(ratio - 16) <= 1.5
    record_criterion(9, ok, f"grad FD rel err={fd_err:.1e} projector err={proj_err:.1e} "
                            f"rho scaling rel err={rho_err:.1e} rk4 halving ratio={ratio:.2f}")
    assert ok


def test_criterion_10_gain_boundary():
    bad = []
    for beta in (0.01, 0.25, 1.0, 4.0, 100.0):
        a0 = 2.0 * np.sqrt(beta)
        for offset in (-1e-6, 0.0, 1e-6):
            alpha, accepts = a0 + offset, offset > 0
            try:
                pm = C.build_pm(alpha, beta)
                got = True
                assert np.linalg.eigvalsh(pm.M)[0] > 0 and np.linalg.eigvalsh(pm.P)[0] > 0
            except C.GainConditionError:
                got = False
            if got != accepts:
                bad.append((alpha, beta))
    record_criterion(10, not bad, f"15 (alpha, beta) pairs across alpha = 2 sqrt(beta) +/- 1e-6; mismatches: {bad}")
    assert not bad
