"""Training: configuration, epoch loop, validation and checkpointed fitting."""

from .config import SCHEDULER_METRICS, ConfigError, TrainConfig
from .loop import (
    LOG_COLUMNS,
    EpochResult,
    FitResult,
    TrainingError,
    fit,
    load_split,
    predict_all,
    train_epoch,
    validate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
