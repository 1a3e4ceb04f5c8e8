"""Algorithm prescreen and TPE search over (algorithm, hyperparameters, k)."""
from .space import TABLE_DOMAINS, Choice, IntRange, SearchSpace, Uniform
from .tpe import TPEConfig, TPESampler, split_good_bad, tpe_suggest
from .tuner import (
    LossConfig,
    ScreenResult,
    TrialRecord,
    TuneHistory,
    conditional_loss,
    loss,
    optimize,
    prescreen,
    screen_specs,
)

__all__ = [
    "TABLE_DOMAINS",
    "Choice",
    "IntRange",
    "LossConfig",
    "ScreenResult",
    "SearchSpace",
    "TPEConfig",
    "TPESampler",
    "TrialRecord",
    "TuneHistory",
    "Uniform",
    "conditional_loss",
    "loss",
    "optimize",
    "prescreen",
    "screen_specs",
    "split_good_bad",
    "tpe_suggest",
]
