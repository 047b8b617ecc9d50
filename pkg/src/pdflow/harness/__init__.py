"""Benchmark definition, run configuration, experiment drivers and CLI."""

from .benchmark import Benchmark5, benchmark_graph, benchmark_problem
from .config import ConfigError, RunConfig, load_config

__all__ = ["Benchmark5", "benchmark_graph", "benchmark_problem", "ConfigError", "RunConfig", "load_config"]
