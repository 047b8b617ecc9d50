"""Time the compiled and numpy RK4 kernels on the five-agent benchmark.

Usage: python benchmarks/bench_kernels.py [--steps N] [--repeat R]
"""

import argparse
import timeit

import numpy as np

from pdflow import _kernels_py
from pdflow.digraph import spectral_data
from pdflow.dynamics import Gains, _kernel_args, initial_state
from pdflow.harness.benchmark import benchmark_graph, benchmark_problem

try:
    from pdflow import _kernels as _compiled
except ImportError:
    _compiled = None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    p = benchmark_problem()
    sd = spectral_data(benchmark_graph())
    kargs = _kernel_args(p, sd, Gains(5.0, 1.0, 1e-8))
    s0 = initial_state(p, seed=0, halfwidth=1.0)

    backends = [("numpy", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    results = {}
    for name, mod in backends:
        def call():
            return mod.rk4(*kargs, s0.x, s0.z, 1e-3, args.steps, 100, 1e9)
        out = call()
        best = min(timeit.repeat(call, number=1, repeat=args.repeat))
        results[name] = (best, out)
        print(f"{name:>7}: {best:8.4f} s for {args.steps} RK4 steps ({1e6 * best / args.steps:.2f} us/step)")
    if len(results) == 2:
        diff = np.abs(results["numpy"][1][0] - results["cython"][1][0]).max()
        print(f"speedup: {results['numpy'][0] / results['cython'][0]:.1f}x, max state difference {diff:.2e}")
    else:
        print("compiled kernels unavailable; only the numpy path was timed")


if __name__ == "__main__":
    main()
