"""Quantization-aware training and weight export for the staged early-exit
inference engine."""

from .export import (ExportedModel, ExportError, export_model, fold_bn_to_thresholds,
                     read_weight_file, simulate_int, write_weight_file)
from .losses import joint_loss
from .model import StagedQuantNet, binarize_ste, quantize_act_ste
from .train import TrainConfig, TrainResult, evaluate, load_cifar_bin, train

__all__ = [
    "ExportError", "ExportedModel", "StagedQuantNet", "TrainConfig",
    "TrainResult", "binarize_ste", "evaluate", "export_model",
    "fold_bn_to_thresholds", "joint_loss", "load_cifar_bin",
    "quantize_act_ste", "read_weight_file", "simulate_int", "train",
    "write_weight_file",
]
