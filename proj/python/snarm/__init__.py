"""Residual-matching anomaly detection with navigated state-space scanning."""

from ._snarm import (
    Config,
    ConfigError,
    DataError,
    Error,
    InvalidArgument,
    NumericError,
    Trained,
    auroc,
    average_precision,
    coreset,
    covering_radius,
    extract_features,
    focal_loss,
    generate_synthetic,
    nearest,
    pro,
    run,
    topk,
    train,
)

__all__ = [
    "Config",
    "ConfigError",
    "DataError",
    "Error",
    "InvalidArgument",
    "NumericError",
    "Trained",
    "auroc",
    "average_precision",
    "coreset",
    "covering_radius",
    "extract_features",
    "focal_loss",
    "generate_synthetic",
    "nearest",
    "pro",
    "run",
    "topk",
    "train",
]
