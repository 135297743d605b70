"""Benchmark harness for user-state representations under linear contextual
bandits on top of matrix-factorization item embeddings."""

from .bandits import ArmTable, Policy, init_arms, rank_of_item, rank_topk, warm_start
from .config import Config, ExperimentConfig, build_experiment
from .embeddings import EmbeddingSpace, train_als, train_bpr
from .errors import ConfigError, NumericalError, SchemaError
from .evaluation import RunSummary, WindowMetrics, run_experiment, run_window
from .ingest import CsvSchema, InteractionLog, SplitPlan, clean, load_csv, split
from .state import StateSpec, build_state, empty_history, update_history
from .stats import ResultTable, TestReport, analyze, friedman, nemenyi_cd

__version__ = "0.1.0"

__all__ = [
    "ArmTable", "Config", "ConfigError", "CsvSchema", "EmbeddingSpace",
    "ExperimentConfig", "InteractionLog", "NumericalError", "Policy",
    "ResultTable", "RunSummary", "SchemaError", "SplitPlan", "StateSpec",
    "TestReport", "WindowMetrics", "analyze", "build_experiment",
    "build_state", "clean", "empty_history", "friedman", "init_arms",
    "load_csv", "nemenyi_cd", "rank_of_item", "rank_topk", "run_experiment",
    "run_window", "split", "train_als", "train_bpr", "update_history",
    "warm_start", "__version__",
]
