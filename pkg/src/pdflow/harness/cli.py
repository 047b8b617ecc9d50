"""Command line interface: ``pdflow <command> ...``.

Exit codes: 0 converged or feasible, 1 configuration error, 2 divergence
or no convergence by the horizon, 3 certificate infeasible.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from . import experiments as ex
from .config import OUTPUT_ENV, ConfigError, load_config


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pdflow",
        description="Simulate and certify the distributed primal-dual flow on directed graphs.",
        epilog=f"Set {OUTPUT_ENV} to override the output directory of config-driven commands.",
    )
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one run and write its trajectory CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config and environment)")

    p = sub.add_parser("certify", help="evaluate the convergence certificate for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--trajectory", help="trajectory CSV to check the inequalities along")
    p.add_argument("--samples", type=int, default=10_000, help="sector-check samples")
    p.add_argument("--out", help="output directory (overrides config and environment)")

    p = sub.add_parser("reproduce", help="regenerate a benchmark figure's data and plot script")
    p.add_argument("experiment", choices=sorted(ex.FIGURES))
    p.add_argument("--out", help="output directory (default: environment, then ./pdflow_out)")

    p = sub.add_parser("sweep", help="run a grid of configurations")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config and environment)")

    p = sub.add_parser("connectivity", help="spectral data of a graph file or built-in graph")
    p.add_argument("--graph", required=True)
    return ap


def _emit(doc) -> None:
    sys.stdout.write(yaml.safe_dump(json.loads(json.dumps(doc, default=float)), sort_keys=True))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            code, doc = ex.simulate(load_config(args.config), args.out)
        elif args.command == "certify":
            code, doc = ex.certify(load_config(args.config), args.trajectory, args.out, args.samples)
        elif args.command == "reproduce":
            code, doc = ex.reproduce(args.experiment, args.out)
        elif args.command == "sweep":
            code, doc = ex.sweep(load_config(args.config), args.out)
            doc = {k: v for k, v in doc.items() if k != "rows"}
        else:
            code, doc = ex.connectivity(args.graph)
    except ex.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return ex.EXIT_INFEASIBLE
    except (ConfigError, OSError, KeyError, TypeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG
    _emit(doc)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
