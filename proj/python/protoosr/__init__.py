"""Prototype-based open-set recognition: PL, GCPL and SLCPL."""

from ._core import (
    UNKNOWN,
    Checkpoint,
    Config,
    ConfigError,
    DataFormatError,
    DimensionError,
    Error,
    NumericError,
    ProtocolError,
    RunData,
    UsageError,
    auroc,
    calibrate_threshold,
    config_with,
    evaluate,
    export_features,
    macro_f1,
    openness,
    prepare_data,
    score,
    slc,
    sweep_openness,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
