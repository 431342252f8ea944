"""Quantum kernel self-attention (SASQuaTCh) simulator and training framework."""

from .errors import (
    CapacityError,
    DegenerateInputError,
    FormatError,
    NumericalConsistencyError,
    SasquatchError,
    StructuralError,
)
from .model import ModelConfig, ModelParams, build_circuit, forward, init_params
from .resources import estimate
from .train import TrainConfig, train_model

__all__ = [
    "CapacityError",
    "DegenerateInputError",
    "FormatError",
    "ModelConfig",
    "ModelParams",
    "NumericalConsistencyError",
    "SasquatchError",
    "StructuralError",
    "TrainConfig",
    "build_circuit",
    "estimate",
    "forward",
    "init_params",
    "train_model",
]
