"""The five-agent benchmark: nonconvex local costs with a strongly convex sum.

Local costs on ``R^4`` (components indexed 1..4)::

    f1 = x1^2 + x1 x2 + 5 x3^2 - x4^2 + exp(x1)
    f2 = 2 x2^2 - 2 x1 x2 - x3^2 - exp(x1)
    f3 = x1^2 - 2 x3^2 + x2 x3 - sin(x4)
    f4 = -x1^2 + 3 x4^2 + sin(x4)
    f5 = -x2^2 + x4^2

The exp and sin atoms cancel in the sum, whose Hessian is constant and
positive definite with the minimizer at the origin.  The communication
graph is a stand-in: a directed 5-cycle with chords 1->3 and 3->5, which is
strongly connected and weight-unbalanced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..costs import LocalCost, Problem
from ..digraph import Digraph

M = 4
CANONICAL_EDGES = ((0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (2, 4))
GRAPH_NOTE = ("canonical substitute graph: directed cycle 1->2->3->4->5->1 "
              "plus chords 1->3 and 3->5")


def _e(k):
    return np.eye(M)[k]


def benchmark_problem(box_halfwidth: float = 5.0) -> Problem:
    costs = [
        LocalCost(H=[[2, 1, 0, 0], [1, 0, 0, 0], [0, 0, 10, 0], [0, 0, 0, -2]],
                  exp_atoms=[(1.0, _e(0))]),
        LocalCost(H=[[0, -2, 0, 0], [-2, 4, 0, 0], [0, 0, -2, 0], [0, 0, 0, 0]],
                  exp_atoms=[(-1.0, _e(0))]),
        LocalCost(H=[[2, 0, 0, 0], [0, 0, 1, 0], [0, 1, -4, 0], [0, 0, 0, 0]],
                  sin_atoms=[(-1.0, _e(3))]),
        LocalCost(H=np.diag([-2.0, 0, 0, 6]), sin_atoms=[(1.0, _e(3))]),
        LocalCost(H=np.diag([0.0, -2, 0, 2])),
    ]
    return Problem(costs, box_halfwidth=box_halfwidth, name="benchmark5")


def benchmark_graph(weight: float = 1.0) -> Digraph:
    """Canonical graph with every edge weight set to ``weight``."""
    edges = [(s, d, weight) for s, d in CANONICAL_EDGES]
    label = "canonical" if weight == 1.0 else f"canonical_x{weight:g}"
    return Digraph.from_edges(5, edges, name=label)


@dataclass(frozen=True)
class Benchmark5:
    problem: Problem
    graph: Digraph
    graph_scaled: Digraph

    @classmethod
    def build(cls, box_halfwidth: float = 5.0) -> "Benchmark5":
        return cls(benchmark_problem(box_halfwidth), benchmark_graph(1.0), benchmark_graph(4.0))


BUILTIN_PROBLEMS = {"benchmark5": benchmark_problem}
BUILTIN_GRAPHS = {
    "canonical": lambda: benchmark_graph(1.0),
    "canonical_x4": lambda: benchmark_graph(4.0),
}
