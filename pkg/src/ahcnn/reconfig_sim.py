"""Deterministic cost model of the MPSoC target: a static region plus one
reconfigurable slot that holds a single conv stage at a time.

Batch processing amortizes the bitstream swap: each stage with surviving
images is configured once per batch, then executes per-image. The CPU mode
runs every stage in software with no configuration events.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

CONFIGURE = "configure"
EXECUTE = "execute"

# Zynq XC7Z020 numbers: per-part utilization vs device totals
DEVICE_TOTALS = {"bram": 280, "dsp": 220, "ff": 106400}
PART_RESOURCES = {
    1: {"bram": 81, "dsp": 120, "ff": 15672},
    2: {"bram": 91, "dsp": 96, "ff": 16647},
    3: {"bram": 96, "dsp": 96, "ff": 34069},
    4: {"bram": 31, "dsp": 24, "ff": 9908},
}


@dataclass(frozen=True)
class TimelineEvent:
    kind: str  # configure | execute
    stage: int
    image_count: int
    start_ms: float
    duration_ms: float

    @property
    def end_ms(self) -> float:
        return self.start_ms + self.duration_ms


@dataclass(frozen=True)
class DeviceModel:
    stage_resources: dict[int, dict[str, int]] = field(
        default_factory=lambda: {k: dict(v) for k, v in PART_RESOURCES.items()})
    totals: dict[str, int] = field(default_factory=lambda: dict(DEVICE_TOTALS))


@dataclass(frozen=True)
class SimReport:
    events: tuple[TimelineEvent, ...]
    total_ms: float
    throughput_imgs_per_s: float
    survivors: tuple[int, ...]
    flops_fraction: float
    cpu_baseline_ms: float
    batch: int
    mode: str


def _check_survivors(survivors, batch: int):
    survivors = [int(s) for s in survivors]
    if batch <= 0:
        raise ValueError("batch must be positive")
    if not survivors:
        raise ValueError("need at least one stage of survivors")
    if survivors[0] != batch:
        raise ValueError(f"survivors[0] ({survivors[0]}) must equal batch ({batch})")
    if any(b > a for a, b in zip(survivors, survivors[1:])):
        raise ValueError(f"survivors must be non-increasing, got {survivors}")
    if any(s < 0 for s in survivors):
        raise ValueError("survivor counts must be non-negative")
    return survivors


def simulate_batch(stages, survivors, batch: int, mode: str = "fpga",
                   gate_ms_per_image: float = 0.0,
                   config_ms_override: float | None = None) -> SimReport:
    """Build the batch timeline and throughput/FLOPs accounting.

    stages: conv StageSpec list (head cost is folded into per-image times).
    survivors[s]: images entering stage s; stages with zero survivors are
    skipped entirely (no configuration, no execution).
    """
    if mode not in ("fpga", "cpu"):
        raise ValueError(f"unknown mode {mode!r}")
    survivors = _check_survivors(survivors, batch)
    if len(survivors) != len(stages):
        raise ValueError("survivors and stages must have the same length")

    events = []
    t = 0.0
    for stage, surv in zip(stages, survivors):
        if surv == 0:
            continue
        if mode == "fpga":
            config = stage.config_ms if config_ms_override is None else config_ms_override
            if config > 0:
                events.append(TimelineEvent(CONFIGURE, stage.id, 0, t, config))
                t += config
            per_image = stage.fpga_exec_ms_per_image + gate_ms_per_image
        else:
            per_image = stage.cpu_exec_ms_per_image + gate_ms_per_image
        exec_ms = surv * per_image
        events.append(TimelineEvent(EXECUTE, stage.id, surv, t, exec_ms))
        t += exec_ms

    total_ms = t
    throughput = batch / (total_ms / 1000.0) if total_ms > 0 else float("inf")
    fraction = computation_fraction(survivors, [s.flops for s in stages], batch)
    cpu_baseline = batch * sum(s.cpu_exec_ms_per_image for s in stages)
    return SimReport(tuple(events), total_ms, throughput, tuple(survivors),
                     fraction, cpu_baseline, batch, mode)


def computation_fraction(survivors, flops, batch: int) -> float:
    """Executed MACs divided by the MACs of running every image end to end."""
    survivors = _check_survivors(survivors, batch)
    flops = [int(f) for f in flops]
    if len(flops) != len(survivors):
        raise ValueError("flops and survivors must have the same length")
    full = batch * sum(flops)
    if full == 0:
        raise ValueError("total flops must be positive")
    done = sum(s * f for s, f in zip(survivors, flops))
    return done / full


def validate_resources(device: DeviceModel):
    """Check each stage alone against device totals; violations are data."""
    violations = []
    for stage_id in sorted(device.stage_resources):
        used = device.stage_resources[stage_id]
        for name, total in device.totals.items():
            if used.get(name, 0) > total:
                violations.append((stage_id, name))
    return violations


# ---------------------------------------------------------------------------
# report export

def report_to_dict(report: SimReport) -> dict:
    return {
        "total_ms": report.total_ms,
        "throughput_imgs_per_s": report.throughput_imgs_per_s,
        "batch": report.batch,
        "mode": report.mode,
        "survivors": list(report.survivors),
        "flops_fraction": report.flops_fraction,
        "cpu_baseline_ms": report.cpu_baseline_ms,
        "events": [
            {"kind": e.kind, "stage": e.stage, "image_count": e.image_count,
             "start_ms": e.start_ms, "duration_ms": e.duration_ms}
            for e in report.events
        ],
    }


def report_to_json(report: SimReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, separators=(",", ":"))


def report_to_csv(report: SimReport, stages) -> str:
    """One row per stage: survivors, config_ms, exec_ms, flops."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["stage", "survivors", "config_ms", "exec_ms", "flops"])
    exec_by_stage = {}
    config_by_stage = {}
    for e in report.events:
        if e.kind == EXECUTE:
            exec_by_stage[e.stage] = e.duration_ms
        else:
            config_by_stage[e.stage] = e.duration_ms
    for stage, surv in zip(stages, report.survivors):
        writer.writerow([stage.id, surv, config_by_stage.get(stage.id, 0.0),
                         exec_by_stage.get(stage.id, 0.0), stage.flops])
    return buf.getvalue()
