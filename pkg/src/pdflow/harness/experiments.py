"""Experiment drivers behind the command line.

Each driver takes a `RunConfig`, writes its files and returns an exit code
with a result mapping.  Exit codes: 0 converged or feasible, 1 configuration
error, 2 divergence or no convergence by the horizon, 3 certificate
infeasible.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .. import certificates as cert
from ..costs import Constants, Problem, constants, kkt_residual
from ..digraph import Digraph, SpectralData, graph_to_dict, scale, spectral_data, strongly_connected
from ..dynamics import (
    Gains, State, Trajectory, auto_horizon, equilibrium, initial_state, integrate, observables,
    read_csv, write_csv,
)
from .benchmark import BUILTIN_GRAPHS, GRAPH_NOTE
from .config import AUTO, CERTIFIED, ConfigError, RunConfig

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INFEASIBLE = 0, 1, 2, 3
MAX_RK4_STEPS = 500_000_000


class InfeasibleError(RuntimeError):
    """A certified gain or scaling was requested but no certificate exists."""


@dataclass
class Setup:
    """Everything resolved from a config before integrating."""

    cfg: RunConfig
    problem: Problem
    graph: Digraph
    sd: SpectralData
    consts: Constants
    gains: Gains
    scale: float
    s0: State
    eq: State
    T: float

    @property
    def pm(self):
        try:
            return cert.build_pm(self.gains.alpha, self.gains.beta)
        except cert.GainConditionError:
            return None


def resolve(cfg: RunConfig) -> Setup:
    """Load inputs and resolve ``certified`` gains or scales and ``auto`` horizons."""
    from .config import load_graph_ref, load_problem_ref

    p = load_problem_ref(cfg.problem, cfg.base_dir)
    g0 = load_graph_ref(cfg.graph, cfg.base_dir)
    if g0.n != p.N:
        raise ConfigError(f"graph has {g0.n} nodes but the problem has {p.N} agents")
    if not strongly_connected(g0):
        raise ConfigError("graph is not strongly connected")
    sd0 = spectral_data(g0)
    try:
        consts = constants(p)
    except ValueError as exc:
        raise ConfigError(f"problem constants: {exc}") from exc

    want_gamma = cfg.gamma == CERTIFIED
    want_scale = cfg.graph_scale == CERTIFIED
    if want_gamma and want_scale:
        raise ConfigError("gamma and graph_scale cannot both be 'certified'")
    pm = None
    if want_gamma or want_scale:
        try:
            pm = cert.build_pm(cfg.alpha, cfg.beta)
        except cert.GainConditionError as exc:
            raise InfeasibleError(str(exc)) from exc

    if want_scale:
        if not cfg.gamma > 0:
            raise ConfigError("graph_scale 'certified' needs a positive numeric gamma")
        s = cert.required_scale(Gains(cfg.alpha, cfg.beta, cfg.gamma), pm, sd0, consts) / cfg.certified_margin
    else:
        s = float(cfg.graph_scale)
    g = g0 if s == 1.0 else scale(g0, s)
    sd = sd0 if s == 1.0 else spectral_data(g)
    gamma = cfg.certified_margin * cert.gamma_max(pm, sd, consts) if want_gamma else float(cfg.gamma)
    gains = Gains(cfg.alpha, cfg.beta, gamma)

    s0 = initial_state(p, cfg.seed, cfg.init_halfwidth)
    eq = equilibrium(p, sd, gains, s0)
    T = auto_horizon(p, sd, gains, s0, eq) if cfg.T == AUTO else float(cfg.T)
    if cfg.method == "rk4" and T / cfg.dt > MAX_RK4_STEPS:
        raise ConfigError(f"rk4 would need {T / cfg.dt:.3g} steps for T={T:.3g}; use method lsoda")
    return Setup(cfg, p, g, sd, consts, gains, s, s0, eq, T)


def run(setup: Setup) -> Trajectory:
    return integrate(setup.problem, setup.sd, setup.gains, setup.s0, setup.cfg.integrator(setup.T), setup.eq)


def exit_code(traj: Trajectory, tol: float) -> int:
    return EXIT_OK if traj.converged(tol) else EXIT_DIVERGED


def _graph_record(g: Digraph, cfg: RunConfig) -> dict:
    rec = {"fingerprint": g.fingerprint(), **graph_to_dict(g)}
    if cfg.graph in BUILTIN_GRAPHS:
        rec["note"] = GRAPH_NOTE
    return rec


def metadata(setup: Setup, traj: Trajectory, code: int) -> dict:
    cfg = setup.cfg
    with np.errstate(over="ignore", invalid="ignore"):
        kkt = kkt_residual(setup.problem, setup.sd, setup.gains.gamma, traj.X[-1], traj.Z[-1])
    return {
        "seed": cfg.seed,
        "problem": cfg.problem,
        "gains": {"alpha": setup.gains.alpha, "beta": setup.gains.beta, "gamma": setup.gains.gamma},
        "graph_scale": setup.scale,
        "graph": _graph_record(setup.graph, cfg),
        "method": cfg.method,
        "dt": cfg.dt,
        "T": setup.T,
        "init_halfwidth": cfg.init_halfwidth if cfg.init_halfwidth is not None else setup.problem.box_halfwidth,
        "backend": traj.meta.get("backend"),
        "records": len(traj),
        "exit_code": code,
        "converged": traj.converged(cfg.tolerance),
        "diverged": traj.diverged,
        "blowup_time": traj.blowup_time,
        "final_err_norm": float(traj.obs["err_norm"][-1]),
        "kkt_residual": list(kkt),
        "x_star": setup.eq.x[0].tolist(),
    }


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def simulate(cfg: RunConfig, out: str | None = None):
    """Integrate one run; write ``<prefix>trajectory.csv`` and ``<prefix>metadata.json``."""
    setup = resolve(cfg)
    traj = run(setup)
    code = exit_code(traj, cfg.tolerance)
    outdir = cfg.resolved_output_dir(out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(traj, outdir / f"{cfg.prefix}trajectory.csv")
    meta = metadata(setup, traj, code)
    _write_json(outdir / f"{cfg.prefix}metadata.json", meta)
    return code, meta


# ---------------------------------------------------------------------------
# certify

def _trajectory_from_csv(path, setup: Setup) -> Trajectory:
    times, X, Z = read_csv(path)
    if X.shape[1:] != (setup.problem.N, setup.problem.m):
        raise ConfigError(f"trajectory {path} has shape {X.shape[1:]}, expected {(setup.problem.N, setup.problem.m)}")
    s0 = State(X[0], Z[0])
    eq = equilibrium(setup.problem, setup.sd, setup.gains, s0)
    obs = observables(setup.problem, setup.sd, setup.gains, eq, X, Z)
    return Trajectory(times=times, X=X, Z=Z, obs=obs, equilibrium=eq, gains=setup.gains)


def certify(cfg: RunConfig, trajectory: str | None = None, out: str | None = None, samples: int = 10_000):
    """Write ``<prefix>certificate.yaml``; exit 3 when the gains are not certified."""
    try:
        setup = resolve(cfg.with_(T=1.0))
    except InfeasibleError:
        setup = None
    if setup is None:
        # certified gain or scale requested without a valid storage function
        setup = resolve(cfg.with_(gamma=0.0 if cfg.gamma == CERTIFIED else cfg.gamma,
                                  graph_scale=1.0 if cfg.graph_scale == CERTIFIED else cfg.graph_scale,
                                  T=1.0))
    report = cert.certify(setup.gains, setup.sd, setup.consts)
    doc = report.to_dict()
    doc["graph_scale"] = setup.scale
    doc["graph_fingerprint"] = setup.graph.fingerprint()
    doc["mu_method"] = setup.consts.mu_method
    pm = setup.pm
    if trajectory is not None and pm is not None:
        traj = _trajectory_from_csv(trajectory, setup)
        dis = cert.check_dissipation(traj, pm, setup.sd, setup.gains, setup.problem, consts=setup.consts)
        sec = cert.check_sector(setup.problem, setup.sd, traj.equilibrium.x, setup.consts, samples=samples)
        doc["trajectory"] = {
            "path": str(trajectory),
            "records": len(traj),
            "dissipation_max_violation": dis.max_violation,
            "dissipation_max_relative_violation": dis.max_relative_violation,
            "sector_min_slack": sec.min_slack_sector,
            "sector_min_slack_stacked_mu": sec.min_slack_sector_stacked,
            "growth_min_slack": sec.min_slack_growth,
            "sector_samples": sec.n_samples,
            "final_err_norm": float(traj.obs["err_norm"][-1]),
        }
        try:
            fitted, certified = cert.rate_estimate(traj, pm, setup.sd, setup.consts)
            doc["trajectory"].update(fitted_rate=fitted, certified_rate=certified)
        except cert.FitWindowError as exc:
            doc["trajectory"]["fit_error"] = str(exc)
    doc = _plain(doc)
    outdir = cfg.resolved_output_dir(out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{cfg.prefix}certificate.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))
    return (EXIT_OK if report.feasible else EXIT_INFEASIBLE), doc


def _plain(obj):
    """Convert numpy scalars and tuples so the document serializes as plain YAML."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# connectivity

def connectivity(graph_ref: str):
    from .config import load_graph_ref

    g = load_graph_ref(graph_ref)
    doc = {"name": g.name, "n": g.n, "fingerprint": g.fingerprint(),
           "strongly_connected": strongly_connected(g), "balanced": g.is_balanced()}
    if doc["strongly_connected"]:
        sd = spectral_data(g)
        doc.update(r=sd.r.tolist(), rho=sd.rho, rmin=sd.rmin, rho_rmin=sd.rho_rmin,
                   laplacian_eigenvalues=sorted(np.linalg.eigvals(sd.L).real.tolist()))
        code = EXIT_OK
    else:
        code = EXIT_INFEASIBLE
    return code, _plain(doc)


# ---------------------------------------------------------------------------
# reproductions

REPRO_BASE = dict(problem="benchmark5", beta=1.0, alpha=5.0, method="rk4", dt=1e-3,
                  record_stride=10, seed=0, init_halfwidth=1.0)

FIGURES = {
    "fig3": {
        "title": "consensus regime: alpha in {1, 5}, beta = 1, gamma = 0",
        "runs": [("alpha1", dict(alpha=1.0, gamma=0.0, T=20.0)),
                 ("alpha5", dict(alpha=5.0, gamma=0.0, T=20.0))],
        "plots": [("xLx", "x'Lx", True), ("zLz", "z'Lz", True)],
    },
    "fig4": {
        "title": "cost weight: gamma in {0.1, 0.5}, alpha = 5, beta = 1, unit-weight graph",
        "runs": [("gamma0.1", dict(gamma=0.1, T=40.0)),
                 ("gamma0.5", dict(gamma=0.5, T=40.0))],
        "plots": [("f_x", "f(x)", False)],
    },
    "fig5": {
        "title": "gamma = 0.5, alpha = 5, beta = 1 on the weight-4 graph",
        "runs": [("gamma0.5_x4", dict(gamma=0.5, graph="canonical_x4", T=40.0))],
        "plots": [("f_x", "f(x)", False), ("err_norm", "|x - 1 x*|", True)],
    },
}


def _plot_script(fig: str, figure: dict, files: list) -> str:
    lines = [
        f"# {fig}: {figure['title']}",
        f"# graph: {GRAPH_NOTE}",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 900,600",
        "set xlabel 't'",
    ]
    for col, label, logy in figure["plots"]:
        lines += [f"set output '{fig}_{col}.png'", f"set ylabel \"{label}\""]
        lines.append("set logscale y" if logy else "unset logscale y")
        curves = [f"'{f}' using (column('t')):(column('{col}')) with lines title '{tag}'" for tag, f in files]
        lines.append("plot " + ", \\\n     ".join(curves))
    return "\n".join(lines) + "\n"


def log_error_fit(traj: Trajectory, lo: float = 1e-9, hi: float = 1e-2):
    """Linear fit of ``log |x - 1 x*|`` over records with the error inside ``[lo, hi]``."""
    e = traj.obs["err_norm"]
    w = (e >= lo) & (e <= hi)
    if w.sum() < 3:
        return None
    slope, intercept, r2 = cert.fit_log_linear(traj.times[w], e[w])
    return {"slope": slope, "intercept": intercept, "r2": r2, "points": int(w.sum())}


def reproduce(fig: str, out: str | None = None, base: RunConfig | None = None):
    """Run one figure's parameter grid; write a CSV per curve, a gnuplot script and a manifest."""
    if fig not in FIGURES:
        raise ConfigError(f"unknown experiment {fig!r}; expected one of {sorted(FIGURES)}")
    figure = FIGURES[fig]
    base = base or RunConfig(**REPRO_BASE)
    outdir = base.resolved_output_dir(out)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {"experiment": fig, "title": figure["title"], "graph_note": GRAPH_NOTE,
                "graph_substitute": True, "runs": []}
    files = []
    for tag, kw in figure["runs"]:
        setup = resolve(base.with_(**kw))
        traj = run(setup)
        fname = f"{fig}_{tag}.csv"
        write_csv(traj, outdir / fname)
        files.append((tag, fname))
        rec = metadata(setup, traj, exit_code(traj, base.tolerance))
        rec.update(tag=tag, csv=fname,
                   final_xLx=float(traj.obs["xLx"][-1]), final_zLz=float(traj.obs["zLz"][-1]),
                   final_f=float(traj.obs["f_x"][-1]))
        pm = setup.pm
        if pm is not None:
            rep = cert.certify(setup.gains, setup.sd, setup.consts)
            rec.update(certified=rep.feasible, gamma_max=rep.gamma_max, scale_required=rep.scale_required)
        if fig == "fig5":
            rec["log_error_fit"] = log_error_fit(traj)
        manifest["runs"].append(rec)
    (outdir / f"{fig}.gp").write_text(_plot_script(fig, figure, files))
    _write_json(outdir / f"{fig}_manifest.json", _plain(manifest))
    return EXIT_OK, manifest


# ---------------------------------------------------------------------------
# sweeps

SUMMARY_COLUMNS = ("cell", "param", "value", "alpha", "beta", "gamma", "graph_scale", "feasible",
                   "exit_code", "converged", "diverged", "final_err_norm", "fitted_rate",
                   "certified_rate", "T")


def _cell_config(cfg: RunConfig, gamma_max: float | None, value: float) -> RunConfig:
    param = cfg.sweep.param
    if param == "gamma_factor":
        if gamma_max is None:
            raise InfeasibleError("gamma_factor sweeps need alpha^2 > 4 beta")
        return cfg.with_(gamma=value * gamma_max, sweep=None)
    if param == "scale":
        return cfg.with_(graph_scale=value, sweep=None)
    return cfg.with_(**{param: value, "sweep": None})


def _run_cell(args):
    idx, cfg, outdir, save = args
    row = {"cell": idx}
    setup = resolve(cfg)
    rep = cert.certify(setup.gains, setup.sd, setup.consts)
    traj = run(setup)
    code = exit_code(traj, cfg.tolerance)
    if save:
        write_csv(traj, Path(outdir) / f"cell_{idx:04d}.csv")
    fitted = certified = float("nan")
    pm = setup.pm
    if pm is not None and not traj.diverged:
        try:
            fitted, certified = cert.rate_estimate(traj, pm, setup.sd, setup.consts)
        except cert.FitWindowError:
            certified = cert.certified_rate(setup.gains, pm, setup.sd, setup.consts)
    row.update(alpha=setup.gains.alpha, beta=setup.gains.beta, gamma=setup.gains.gamma,
               graph_scale=setup.scale, feasible=rep.feasible, exit_code=code,
               converged=traj.converged(cfg.tolerance), diverged=traj.diverged,
               final_err_norm=float(traj.obs["err_norm"][-1]), fitted_rate=fitted,
               certified_rate=certified, T=setup.T)
    return row


def sweep(cfg: RunConfig, out: str | None = None):
    """Run every cell of ``cfg.sweep``; exit 2 if any certified cell fails to converge."""
    if cfg.sweep is None:
        raise ConfigError("config has no sweep section")
    sw = cfg.sweep
    outdir = cfg.resolved_output_dir(out)
    outdir.mkdir(parents=True, exist_ok=True)
    gmax = None
    if sw.param == "gamma_factor":
        base = resolve(cfg.with_(gamma=0.0, T=1.0, sweep=None))
        pm = base.pm
        gmax = cert.gamma_max(pm, base.sd, base.consts) if pm is not None else None
    cells = [(k, _cell_config(cfg, gmax, v), str(outdir), sw.save_trajectories)
             for k, v in enumerate(sw.values)]
    if sw.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=sw.workers) as ex:
            rows = list(ex.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    for row, v in zip(rows, sw.values):
        row.update(param=sw.param, value=v)
    with open(outdir / f"{cfg.prefix}sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    bad = [r["cell"] for r in rows if r["feasible"] and not r["converged"]]
    summary = {"cells": len(rows), "gamma_max": gmax, "certified_not_converged": bad, "rows": rows}
    return (EXIT_DIVERGED if bad else EXIT_OK), summary


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)
