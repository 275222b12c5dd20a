from .config import ConfigError, RunConfig, TrainConfig, config_hash, load_run_config, parse_run_config
from .loop import EpochRecord, RunRecord, RunResult, evaluate_records, predict_records, train
from .metrics import MetricsReport, confusion_matrix, evaluate_predictions, metrics_from_confusion
from .experiments import (
    ABLATION_GRID,
    AblationCell,
    KFoldResult,
    SweepPoint,
    ablate,
    kfold_select,
    sweep_unlabeled,
)

__all__ = [
    "ABLATION_GRID",
    "AblationCell",
    "ConfigError",
    "EpochRecord",
    "KFoldResult",
    "MetricsReport",
    "RunConfig",
    "RunRecord",
    "RunResult",
    "SweepPoint",
    "TrainConfig",
    "ablate",
    "config_hash",
    "confusion_matrix",
    "evaluate_predictions",
    "evaluate_records",
    "kfold_select",
    "load_run_config",
    "metrics_from_confusion",
    "parse_run_config",
    "predict_records",
    "sweep_unlabeled",
    "train",
]
