"""Staged quantized CNN inference engine with confidence-gated early exit
and a partial-reconfiguration cost simulator."""

from .gating import Calibration, Decision, GateConfig, calibrate, confidence, \
    decide, entropy, trigger_from_accuracy
from .pipeline import InferenceResult, RunConfig, run_batch, sweep_gamma
from .qlayers import BinaryWeights, Logits, ThresholdParams, binary_conv2d, \
    fully_connected, global_avgpool, maxpool2d, softmax, threshold_activate
from .qtensor import AccumTensor, FloatTensor, QTensor, dequantize, quantize
from .reconfig_sim import DeviceModel, SimReport, TimelineEvent, \
    computation_fraction, simulate_batch, validate_resources
from .staged_model import LayerSpec, StagedModel, StageSpec, forward_stage, \
    load_model, save_model, stage_flops

__all__ = [
    "AccumTensor", "BinaryWeights", "Calibration", "Decision", "DeviceModel",
    "FloatTensor", "GateConfig", "InferenceResult", "LayerSpec", "Logits",
    "QTensor", "RunConfig", "SimReport", "StageSpec", "StagedModel",
    "ThresholdParams", "binary_conv2d", "calibrate", "computation_fraction",
    "confidence", "decide", "dequantize", "entropy", "forward_stage",
    "fully_connected", "global_avgpool", "load_model", "maxpool2d", "quantize",
    "run_batch", "save_model", "simulate_batch", "softmax", "stage_flops",
    "sweep_gamma", "threshold_activate", "trigger_from_accuracy",
    "validate_resources",
]
