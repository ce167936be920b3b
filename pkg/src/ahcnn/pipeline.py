"""Batch orchestration of the staged inference loop: per-stage forward
passes, gate decisions, survivor routing, and metric assembly.

Semantically each image walks the branches in order and exits at the first
Stop decision (or the deepest branch); the implementation batches this by
stage so each bitstream is configured once per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gating import Decision, GateConfig, decide
from .qtensor import QTensor
from .reconfig_sim import SimReport, computation_fraction, simulate_batch
from .staged_model import StagedModel, forward_stage

MODE_FPGA = "fpga_sim"
MODE_CPU = "cpu_sim"
MODE_COMPUTE = "compute_only"


@dataclass(frozen=True)
class RunConfig:
    gate: GateConfig = GateConfig()
    batch_size: int = 64
    mode: str = MODE_FPGA
    force_full: bool = False
    gate_ms_per_image: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode not in (MODE_FPGA, MODE_CPU, MODE_COMPUTE):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class InferenceResult:
    predictions: np.ndarray      # (N,) class indices
    exit_stages: np.ndarray      # (N,) 1-based stage ids
    betas: np.ndarray            # (N,) gate metric at the exit stage
    decisions: tuple             # per image: tuple of Decision per visited stage
    stop_ratios: tuple[float, ...]
    survivors: tuple[int, ...]   # images entering each stage
    flops_fraction: float
    accuracy: float | None
    sim_report: SimReport | None


def run_batch(model: StagedModel, images: QTensor, labels=None,
              cfg: RunConfig = RunConfig()) -> InferenceResult:
    """Route a batch through the staged model with gate decisions."""
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if images.shape[1:] != model.input_shape:
        raise ValueError(f"images have shape {images.shape[1:]}, "
                         f"model expects {model.input_shape}")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise ValueError("labels length must equal the batch size")

    n_stages = len(model.conv_stages)
    predictions = np.zeros(n, dtype=np.int64)
    exit_stages = np.zeros(n, dtype=np.int64)
    betas = np.zeros(n, dtype=np.float64)
    decisions: list[list[Decision]] = [[] for _ in range(n)]

    active = np.arange(n)
    current = images
    survivors = []
    for idx, stage in enumerate(model.conv_stages):
        survivors.append(len(active))
        features, probs = forward_stage(model, stage.id, current)
        last = idx == n_stages - 1
        cont_rows = []
        for row, img in enumerate(active):
            d = decide(probs[row], cfg.gate)
            decisions[img].append(d)
            stop = True if last else (False if cfg.force_full else d.stop)
            if stop:
                predictions[img] = int(np.argmax(probs[row]))
                exit_stages[img] = stage.id
                betas[img] = d.beta
            else:
                cont_rows.append(row)
        if last or not cont_rows:
            survivors.extend([0] * (n_stages - 1 - idx))
            break
        active = active[cont_rows]
        current = features.select(cont_rows)

    stop_counts = [int((exit_stages == s.id).sum()) for s in model.conv_stages]
    stop_ratios = tuple(c / n for c in stop_counts)

    # head cost charged once per gate evaluation (i.e. per visited stage)
    eff_flops = [s.flops + model.head_flops(s.id) for s in model.conv_stages]
    fraction = computation_fraction(survivors, eff_flops, n)

    sim_report = None
    if cfg.mode in (MODE_FPGA, MODE_CPU):
        sim_report = simulate_batch(
            model.conv_stages, survivors, n,
            mode="fpga" if cfg.mode == MODE_FPGA else "cpu",
            gate_ms_per_image=cfg.gate_ms_per_image)

    accuracy = None
    if labels is not None:
        accuracy = float((predictions == labels).mean())

    return InferenceResult(predictions, exit_stages, betas,
                           tuple(tuple(d) for d in decisions),
                           stop_ratios, tuple(survivors), fraction,
                           accuracy, sim_report)


def sweep_gamma(model: StagedModel, images: QTensor, labels, gammas,
                cfg: RunConfig = RunConfig()):
    """Run the pipeline per trigger point; rows sorted by gamma ascending.

    Returns (gamma, accuracy, flops_fraction, throughput) tuples; accuracy is
    None when labels are absent, throughput is None in compute-only mode.
    """
    gammas = sorted(float(g) for g in gammas)
    if not gammas:
        raise ValueError("empty gamma list")
    rows = []
    for gamma in gammas:
        run_cfg = RunConfig(cfg.gate.with_gamma(gamma), cfg.batch_size, cfg.mode,
                            cfg.force_full, cfg.gate_ms_per_image)
        result = run_batch(model, images, labels, run_cfg)
        throughput = (result.sim_report.throughput_imgs_per_s
                      if result.sim_report is not None else None)
        rows.append((gamma, result.accuracy, result.flops_fraction, throughput))
    return rows
