"""From-scratch compact convolutional classifier with batch normalization."""

from .network import CnnModel, LayerSpec, build_model, default_model, finalize_bn, forward, loss_and_backward
from .optim import AdamState, SgdmState, adam_step, sgdm_step
from .training import ConfusionMatrix, HistoryRow, TrainingConfig, evaluate, train

__all__ = [
    "CnnModel",
    "LayerSpec",
    "build_model",
    "default_model",
    "forward",
    "loss_and_backward",
    "finalize_bn",
    "AdamState",
    "SgdmState",
    "adam_step",
    "sgdm_step",
    "TrainingConfig",
    "HistoryRow",
    "ConfusionMatrix",
    "train",
    "evaluate",
]
