"""Parallel attack-graph generation: seed, explore in parallel, merge."""

__version__ = "0.1.0"

from .expand import applicable_exploits, apply_exploit, generate_sequential
from .graph import AttackGraph, PartialGraph, canonical_equal
from .merge import MergeStrategy, merge_into, run_merge
from .netmodel import FactCatalog, NetworkSpec, canonical_state_key, intern_fact, load_spec, validate_spec
from .parallel import WorkerConfig, cyclic_partition, phase1_seed, phase2_explore, run_parallel
from .scenario import TreeScenarioParams, example_three_server, predict_counts, tree_network

__all__ = [
    "AttackGraph",
    "FactCatalog",
    "MergeStrategy",
    "NetworkSpec",
    "PartialGraph",
    "TreeScenarioParams",
    "WorkerConfig",
    "applicable_exploits",
    "apply_exploit",
    "canonical_equal",
    "canonical_state_key",
    "cyclic_partition",
    "example_three_server",
    "generate_sequential",
    "intern_fact",
    "load_spec",
    "merge_into",
    "phase1_seed",
    "phase2_explore",
    "predict_counts",
    "run_merge",
    "run_parallel",
    "tree_network",
    "validate_spec",
]
