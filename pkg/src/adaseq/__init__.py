"""Depth-adaptive LSTM with portion-gated partial updates, fixed-depth
baselines, a from-scratch BPTT trainer and experiment tooling."""

from .architecture import ModelConfig, ModelParams, forward_sequence
from .cells import CellParams, CellState, MaskConstants, da_step, lstm_step
from .training import TrainConfig, TrainReport, train

__all__ = [
    "CellParams",
    "CellState",
    "MaskConstants",
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "TrainReport",
    "da_step",
    "forward_sequence",
    "lstm_step",
    "train",
]
__version__ = "0.1.0"
