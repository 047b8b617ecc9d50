"""Run configuration files.

A config is a YAML (or JSON) mapping::

    schema_version: 1
    problem: benchmark5            # built-in name or path to a problem file
    graph: canonical               # built-in name or path to a graph file
    graph_scale: 1.0               # number, or "certified"
    gains: {alpha: 5, beta: 1, gamma: 0.0}   # gamma may be "certified"
    certified_margin: 0.9          # gamma = margin * gamma_max, scale = s_req / margin
    integrator: {method: rk4, dt: 1.0e-3, T: 20, record_stride: 1}   # T may be "auto"
    seed: 0
    init_halfwidth: 1.0            # optional; defaults to the problem box
    tolerance: 1.0e-6              # convergence threshold on |x - 1 x*|
    output: {dir: out, prefix: ""}
    sweep: {param: gamma_factor, values: [0.1, 0.5, 1, 3], workers: 4}

Unknown keys at any level are errors.  ``PDFLOW_OUTPUT_DIR`` overrides
``output.dir``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from ..costs import Problem, load_problem
from ..digraph import Digraph, load_graph
from ..dynamics import METHODS, Gains, IntegratorConfig
from .benchmark import BUILTIN_GRAPHS, BUILTIN_PROBLEMS

SCHEMA_VERSION = 1
OUTPUT_ENV = "PDFLOW_OUTPUT_DIR"
CERTIFIED = "certified"
AUTO = "auto"
SWEEP_PARAMS = ("alpha", "beta", "gamma", "gamma_factor", "scale")

_TOP_KEYS = {"schema_version", "problem", "graph", "graph_scale", "gains", "certified_margin",
             "integrator", "seed", "init_halfwidth", "tolerance", "output", "sweep", "name"}
_GAIN_KEYS = {"alpha", "beta", "gamma"}
_INTEGRATOR_KEYS = {"method", "dt", "T", "record_stride", "rtol", "atol", "blowup"}
_OUTPUT_KEYS = {"dir", "prefix"}
_SWEEP_KEYS = {"param", "values", "workers", "save_trajectories"}


class ConfigError(ValueError):
    """The configuration is unreadable, malformed, or references missing files."""


@dataclass(frozen=True)
class SweepPlan:
    param: str
    values: tuple
    workers: int = 1
    save_trajectories: bool = True


@dataclass(frozen=True)
class RunConfig:
    problem: str = "benchmark5"
    graph: str = "canonical"
    graph_scale: float | str = 1.0
    alpha: float = 5.0
    beta: float = 1.0
    gamma: float | str = 0.0
    certified_margin: float = 0.9
    method: str = "rk4"
    dt: float = 1e-3
    T: float | str = 20.0
    record_stride: int = 1
    rtol: float = 1e-8
    atol: float = 1e-12
    blowup: float = 1e9
    seed: int = 0
    init_halfwidth: float | None = None
    tolerance: float = 1e-6
    output_dir: str = "pdflow_out"
    prefix: str = ""
    name: str = ""
    sweep: SweepPlan | None = None
    base_dir: str = field(default=".", compare=False)

    def integrator(self, T: float) -> IntegratorConfig:
        return IntegratorConfig(method=self.method, dt=self.dt, T=T, record_stride=self.record_stride,
                                rtol=self.rtol, atol=self.atol, blowup=self.blowup)

    def resolved_output_dir(self, override: str | None = None) -> Path:
        if override:
            return Path(override)
        env = os.environ.get(OUTPUT_ENV, "").strip()
        if env:
            return Path(env)
        out = Path(self.output_dir)
        return out if out.is_absolute() else Path(self.base_dir) / out

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


def _resolve(base: str, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else Path(base) / p


def load_problem_ref(ref: str, base: str = ".") -> Problem:
    if ref in BUILTIN_PROBLEMS:
        return BUILTIN_PROBLEMS[ref]()
    path = _resolve(base, ref)
    if not path.is_file():
        raise ConfigError(f"problem {ref!r} is neither a built-in ({sorted(BUILTIN_PROBLEMS)}) nor a file")
    try:
        return load_problem(path)
    except (ValueError, KeyError, TypeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse problem file {path}: {exc}") from exc


def load_graph_ref(ref: str, base: str = ".") -> Digraph:
    if ref in BUILTIN_GRAPHS:
        return BUILTIN_GRAPHS[ref]()
    path = _resolve(base, ref)
    if not path.is_file():
        raise ConfigError(f"graph {ref!r} is neither a built-in ({sorted(BUILTIN_GRAPHS)}) nor a file")
    try:
        return load_graph(path)
    except (ValueError, KeyError, TypeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse graph file {path}: {exc}") from exc


def _check_keys(doc, allowed, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _number(v, where, positive=False, allow=()):
    if isinstance(v, str) and v in allow:
        return v
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where} must be a number{' or ' + repr(allow) if allow else ''}, got {v!r}")
    v = float(v)
    if not np.isfinite(v) or (positive and v <= 0):
        raise ConfigError(f"{where} must be a finite{' positive' if positive else ''} number, got {v!r}")
    return v


def _values(grid):
    if isinstance(grid, list):
        return tuple(_number(v, "sweep.values") for v in grid)
    if isinstance(grid, dict):
        _check_keys(grid, {"start", "stop", "num", "log"}, "sweep.values")
        start = _number(grid["start"], "sweep.values.start")
        stop = _number(grid["stop"], "sweep.values.stop")
        num = int(grid["num"])
        if num < 1:
            raise ConfigError("sweep.values.num must be >= 1")
        if grid.get("log", False):
            if start <= 0 or stop <= 0:
                raise ConfigError("log-spaced sweep values need positive start and stop")
            return tuple(np.geomspace(start, stop, num).tolist())
        return tuple(np.linspace(start, stop, num).tolist())
    raise ConfigError("sweep.values must be a list or a {start, stop, num, log} mapping")


def config_from_dict(doc, base_dir: str = ".") -> RunConfig:
    _check_keys(doc, _TOP_KEYS, "config")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    kw: dict = {"base_dir": str(base_dir)}
    for key in ("problem", "graph", "name"):
        if key in doc:
            if not isinstance(doc[key], str):
                raise ConfigError(f"{key} must be a string")
            kw[key] = doc[key]
    if "graph_scale" in doc:
        kw["graph_scale"] = _number(doc["graph_scale"], "graph_scale", positive=True, allow=(CERTIFIED,))
    if "certified_margin" in doc:
        m = _number(doc["certified_margin"], "certified_margin", positive=True)
        if m >= 1:
            raise ConfigError("certified_margin must lie in (0, 1)")
        kw["certified_margin"] = m

    gains = doc.get("gains", {})
    _check_keys(gains, _GAIN_KEYS, "gains")
    if "alpha" in gains:
        kw["alpha"] = _number(gains["alpha"], "gains.alpha", positive=True)
    if "beta" in gains:
        kw["beta"] = _number(gains["beta"], "gains.beta", positive=True)
    if "gamma" in gains:
        g = _number(gains["gamma"], "gains.gamma", allow=(CERTIFIED,))
        if not isinstance(g, str) and g < 0:
            raise ConfigError("gains.gamma must be nonnegative")
        kw["gamma"] = g

    integ = doc.get("integrator", {})
    _check_keys(integ, _INTEGRATOR_KEYS, "integrator")
    if "method" in integ:
        if integ["method"] not in METHODS:
            raise ConfigError(f"integrator.method must be one of {METHODS}")
        kw["method"] = integ["method"]
    for key in ("dt", "rtol", "atol", "blowup"):
        if key in integ:
            kw[key] = _number(integ[key], f"integrator.{key}", positive=True)
    if "T" in integ:
        kw["T"] = _number(integ["T"], "integrator.T", positive=True, allow=(AUTO,))
    if "record_stride" in integ:
        s = integ["record_stride"]
        if isinstance(s, bool) or not isinstance(s, int) or s < 1:
            raise ConfigError("integrator.record_stride must be a positive integer")
        kw["record_stride"] = s

    if "seed" in doc:
        if isinstance(doc["seed"], bool) or not isinstance(doc["seed"], int) or doc["seed"] < 0:
            raise ConfigError("seed must be a nonnegative integer")
        kw["seed"] = doc["seed"]
    if "init_halfwidth" in doc:
        kw["init_halfwidth"] = _number(doc["init_halfwidth"], "init_halfwidth", positive=True)
    if "tolerance" in doc:
        kw["tolerance"] = _number(doc["tolerance"], "tolerance", positive=True)

    out = doc.get("output", {})
    _check_keys(out, _OUTPUT_KEYS, "output")
    if "dir" in out:
        kw["output_dir"] = str(out["dir"])
    if "prefix" in out:
        kw["prefix"] = str(out["prefix"])

    if "sweep" in doc:
        sw = doc["sweep"]
        _check_keys(sw, _SWEEP_KEYS, "sweep")
        if sw.get("param") not in SWEEP_PARAMS:
            raise ConfigError(f"sweep.param must be one of {SWEEP_PARAMS}")
        if "values" not in sw:
            raise ConfigError("sweep.values is required")
        workers = sw.get("workers", 1)
        if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
            raise ConfigError("sweep.workers must be a positive integer")
        kw["sweep"] = SweepPlan(sw["param"], _values(sw["values"]), workers,
                                bool(sw.get("save_trajectories", True)))

    cfg = RunConfig(**kw)
    try:
        Gains(cfg.alpha, cfg.beta, 0.0 if isinstance(cfg.gamma, str) else cfg.gamma)
        cfg.integrator(1.0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(doc, base_dir=str(path.parent))


def config_to_dict(cfg: RunConfig) -> dict:
    d = {
        "schema_version": SCHEMA_VERSION,
        "problem": cfg.problem,
        "graph": cfg.graph,
        "graph_scale": cfg.graph_scale,
        "gains": {"alpha": cfg.alpha, "beta": cfg.beta, "gamma": cfg.gamma},
        "certified_margin": cfg.certified_margin,
        "integrator": {"method": cfg.method, "dt": cfg.dt, "T": cfg.T, "record_stride": cfg.record_stride,
                       "rtol": cfg.rtol, "atol": cfg.atol, "blowup": cfg.blowup},
        "seed": cfg.seed,
        "tolerance": cfg.tolerance,
        "output": {"dir": cfg.output_dir, "prefix": cfg.prefix},
    }
    if cfg.name:
        d["name"] = cfg.name
    if cfg.init_halfwidth is not None:
        d["init_halfwidth"] = cfg.init_halfwidth
    if cfg.sweep is not None:
        d["sweep"] = {"param": cfg.sweep.param, "values": list(cfg.sweep.values),
                      "workers": cfg.sweep.workers, "save_trajectories": cfg.sweep.save_trajectories}
    return d

