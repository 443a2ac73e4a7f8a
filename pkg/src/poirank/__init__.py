"""Candidate-conditioned spatiotemporal ranking for next-POI recommendation."""

from .data import (
    CheckIn,
    DatasetStats,
    SplitDataset,
    compute_stats,
    filter_and_split,
    parse_checkins,
)
from .evaluation import (
    RankReport,
    build_eval_pool,
    evaluate,
    metrics_at_k,
    model_scorer,
    mrr,
    pool_size_sweep,
)
from .model import (
    CandidateSlate,
    ModelConfig,
    PaddedHistory,
    attention_dump,
    forward,
    init_params,
    load_checkpoint,
    pad_history,
    save_checkpoint,
)
from .training import TrainConfig, adamw_step, ce_loss, sample_negatives, train

__version__ = "0.1.0"

__all__ = [
    "CheckIn", "DatasetStats", "SplitDataset", "parse_checkins",
    "filter_and_split", "compute_stats",
    "ModelConfig", "PaddedHistory", "CandidateSlate", "pad_history",
    "init_params", "forward", "attention_dump", "save_checkpoint",
    "load_checkpoint",
    "TrainConfig", "sample_negatives", "ce_loss", "adamw_step", "train",
    "RankReport", "build_eval_pool", "metrics_at_k", "mrr", "evaluate",
    "pool_size_sweep", "model_scorer",
    "__version__",
]
