"""Python bindings for the fhgs feature-homogenized gaussian splatting library."""

from ._fhgs import (
    NUM_PARAMS,
    Dataset,
    InvalidParameter,
    LoadError,
    NumericalError,
    Scene,
    UsageError,
    evaluate,
    initialize,
    render,
    run_cli,
    synth,
    train,
)

__all__ = [
    "NUM_PARAMS",
    "Dataset",
    "InvalidParameter",
    "LoadError",
    "NumericalError",
    "Scene",
    "UsageError",
    "evaluate",
    "initialize",
    "render",
    "run_cli",
    "synth",
    "train",
]
