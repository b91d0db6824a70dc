"""Simulator for Byzantine attacks on federated matrix-factorization recommenders."""
from .aggregation import AggregatorSpec, SparseRoundUpdate, sparse_aggregate_and_apply
from .attacks import AttackPlan, plan_malicious_count
from .dataset import InteractionDataset, SyntheticSpec, generate_synthetic, load_movielens
from .evaluation import EpochReport, Evaluator
from .federation import FederationConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AggregatorSpec", "AttackPlan", "EpochReport", "Evaluator", "FederationConfig",
    "InteractionDataset", "SparseRoundUpdate", "SyntheticSpec", "generate_synthetic",
    "load_movielens", "plan_malicious_count", "run_experiment", "sparse_aggregate_and_apply",
]
