"""Python bindings for the graphreason C++ core."""

from ._core import (
    Config,
    ConfigError,
    ContractError,
    Dataset,
    EvaluationError,
    LoadError,
    TrainedModel,
    aggregate,
    average_precision,
    distance_kernel,
    evaluate,
    gradcheck,
    gradcheck_cases,
    iou,
    scalar_bits,
    sweep_csv,
    train,
)

__all__ = [
    "Config",
    "ConfigError",
    "ContractError",
    "Dataset",
    "EvaluationError",
    "LoadError",
    "TrainedModel",
    "aggregate",
    "average_precision",
    "distance_kernel",
    "evaluate",
    "gradcheck",
    "gradcheck_cases",
    "iou",
    "scalar_bits",
    "sweep_csv",
    "train",
]
