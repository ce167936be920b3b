"""Command-line entry point: dataset ingestion, calibration, inference runs,
trigger-point sweeps, and simulation reports.

Commands print JSON on stdout (CSV where noted); failures exit nonzero with
a machine-readable error object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import struct
import sys

import numpy as np

from .gating import GateConfig, calibrate, calibration_from_json, calibration_to_json, \
    default_gamma_grid, trigger_from_accuracy
from .pipeline import MODE_COMPUTE, MODE_CPU, MODE_FPGA, RunConfig, run_batch, sweep_gamma
from .qtensor import FloatTensor, QTensor, quantize
from .reconfig_sim import report_to_csv, report_to_dict, simulate_batch
from .staged_model import (StagedModel, build_random_model, build_resnet18_model,
                           forward_stage, load_model, save_model)

CIFAR10_RECORD = 3073   # 1 label byte + 3*32*32 pixels
CIFAR100_RECORD = 3074  # coarse + fine label bytes + pixels
PIXEL_SCALE = 1.0 / 31.0  # codes represent pixel intensity normalized to [0,1]

RAW_MAGIC = b"AHQT"


# ---------------------------------------------------------------------------
# dataset ingestion

def ingest_cifar(path: str, variant: str = "cifar10"):
    """Parse CIFAR binary batches into a quantized batch plus labels.

    Pixel bytes map onto the 5-bit grid as code = round(pixel/255 * 31),
    i.e. quantize(pixel/255, 1/31). An empty file yields zero images.
    """
    if variant == "cifar10":
        record, label_off = CIFAR10_RECORD, 0
    elif variant == "cifar100":
        record, label_off = CIFAR100_RECORD, 1  # use the fine label
    else:
        raise ValueError(f"unknown CIFAR variant {variant!r}")
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) % record:
        raise ValueError(f"truncated file: {len(blob)} bytes is not a multiple of {record}")
    n = len(blob) // record
    arr = np.frombuffer(blob, dtype=np.uint8).reshape(n, record) if n else \
        np.zeros((0, record), dtype=np.uint8)
    labels = arr[:, label_off].astype(np.int64)
    pixels = arr[:, label_off + 1 :].reshape(n, 3, 32, 32).astype(np.float64) / 255.0
    return quantize(FloatTensor(pixels), PIXEL_SCALE), labels


def write_cifar(path: str, pixels: np.ndarray, labels: np.ndarray,
                variant: str = "cifar10") -> None:
    """Write CIFAR-format binary records (test/demo helper)."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), 3 * 32 * 32)
    with open(path, "wb") as f:
        for px, lb in zip(pixels, labels):
            if variant == "cifar100":
                f.write(bytes([0, int(lb)]))
            else:
                f.write(bytes([int(lb)]))
            f.write(px.tobytes())


def ingest_raw(path: str):
    """Read the generic quantized-tensor container (magic AHQT)."""
    with open(path, "rb") as f:
        blob = f.read()
    head = struct.Struct("<4sIIIIdB")
    if len(blob) < head.size:
        raise ValueError("raw tensor file too short")
    magic, n, c, h, w, scale, has_labels = head.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise ValueError(f"bad raw tensor magic {magic!r}")
    need = head.size + n * c * h * w + (n if has_labels else 0)
    if len(blob) != need:
        raise ValueError(f"raw tensor file has {len(blob)} bytes, expected {need}")
    codes = np.frombuffer(blob, dtype=np.uint8, count=n * c * h * w,
                          offset=head.size).reshape(n, c, h, w)
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype=np.uint8,
                               offset=head.size + n * c * h * w).astype(np.int64)
    return QTensor(codes, scale), labels


def write_raw(path: str, tensor: QTensor, labels=None) -> None:
    n, c, h, w = tensor.shape
    head = struct.Struct("<4sIIIIdB")
    with open(path, "wb") as f:
        f.write(head.pack(RAW_MAGIC, n, c, h, w, tensor.scale, labels is not None))
        f.write(tensor.data.tobytes())
        if labels is not None:
            f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_dataset(path: str, dataset: str, model: StagedModel):
    if dataset in ("cifar10", "cifar100"):
        return ingest_cifar(path, dataset)
    if dataset == "raw":
        return ingest_raw(path)
    raise ValueError(f"unknown dataset kind {dataset!r}")


# ---------------------------------------------------------------------------
# synthetic demo data (seeded; class-correlated so gates have signal)

def synth_images(n: int, num_classes: int, seed: int, shape=(3, 32, 32)):
    """Class-dependent channel means plus noise, as uint8 pixel planes."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    c, h, w = shape
    base = rng.uniform(40, 215, size=(num_classes, c, 1, 1))
    noise = rng.normal(0, 25, size=(n, c, h, w))
    pixels = np.clip(base[labels] + noise, 0, 255).astype(np.uint8)
    return pixels, labels


# ---------------------------------------------------------------------------
# commands

def _model_sha256(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _gate_from_args(args) -> GateConfig:
    priority = frozenset(int(x) for x in args.priority.split(",") if x != "") \
        if args.priority else frozenset()
    return GateConfig(kind=args.gate, gamma=args.gamma, theta=args.theta,
                      top_n=args.top_n, priority_classes=priority,
                      desired_accuracy=getattr(args, "lambda_", None))


def _run_mode(args) -> str:
    return {"fpga": MODE_FPGA, "cpu": MODE_CPU, "compute": MODE_COMPUTE}[args.mode]


def _load_model_file(path: str) -> StagedModel:
    with open(path, "rb") as f:
        return load_model(f.read())


def cmd_demo_model(args) -> int:
    if args.arch == "tiny":
        model = build_random_model(seed=args.seed)
    else:
        model = build_resnet18_model(seed=args.seed)
    blob = save_model(model)
    with open(args.out, "wb") as f:
        f.write(blob)
    print(json.dumps({"out": args.out, "arch": args.arch, "seed": args.seed,
                      "bytes": len(blob), "num_classes": model.num_classes,
                      "input_shape": list(model.input_shape)}))
    return 0


def cmd_demo_data(args) -> int:
    model = _load_model_file(args.model) if args.model else None
    if args.dataset == "raw":
        if model is None:
            raise ValueError("--model is required to size raw demo data")
        c, h, w = model.input_shape
        rng = np.random.default_rng(args.seed)
        codes = rng.integers(0, 32, size=(args.n, c, h, w), dtype=np.uint8)
        labels = rng.integers(0, model.num_classes, size=args.n, dtype=np.uint8)
        write_raw(args.out, QTensor(codes, PIXEL_SCALE), labels)
    else:
        classes = model.num_classes if model else 10
        pixels, labels = synth_images(args.n, classes, args.seed)
        write_cifar(args.out, pixels, labels, args.dataset)
    print(json.dumps({"out": args.out, "n": args.n, "dataset": args.dataset,
                      "seed": args.seed}))
    return 0


def cmd_calibrate(args) -> int:
    model = _load_model_file(args.model)
    images, _ = load_dataset(args.data, args.dataset, model)
    if images.shape[0] == 0:
        raise ValueError("calibration dataset is empty")
    per_stage = []
    current = images
    for stage in model.conv_stages:
        features, probs = forward_stage(model, stage.id, current)
        per_stage.append(probs.max(axis=1).tolist())
        current = features
    cal = calibrate(per_stage)
    text = calibration_to_json(cal)
    with open(args.out, "w") as f:
        f.write(text)
    print(text)
    return 0


def _result_to_dict(result) -> dict:
    return {
        "accuracy": result.accuracy,
        "stop_ratios": list(result.stop_ratios),
        "survivors": list(result.survivors),
        "flops_fraction": result.flops_fraction,
        "predictions": result.predictions.tolist(),
        "exit_stages": result.exit_stages.tolist(),
        "betas": result.betas.tolist(),
    }


def cmd_run(args) -> int:
    model = _load_model_file(args.model)
    images, labels = load_dataset(args.data, args.dataset, model)
    if images.shape[0] == 0:
        raise ValueError("dataset is empty")
    gamma = args.gamma
    if args.gamma_from_sweep:
        if args.lambda_ is None:
            raise ValueError("--gamma-from-sweep requires --lambda")
        with open(args.gamma_from_sweep) as f:
            rows = [(float(r["gamma"]), float(r["accuracy"]), 1.0)
                    for r in csv.DictReader(f)]
        gamma = trigger_from_accuracy(args.lambda_, rows)
    gate = _gate_from_args(args).with_gamma(gamma)
    cfg = RunConfig(gate, batch_size=args.batch, mode=_run_mode(args),
                    force_full=args.force_full)
    result = run_batch(model, images, labels, cfg)
    doc = {
        "meta": {
            "model_sha256": _model_sha256(args.model),
            "dataset": args.dataset,
            "data_path": args.data,
            "batch_size": images.shape[0],
            "mode": args.mode,
            "gate": {"kind": gate.kind, "gamma": gate.gamma, "theta": gate.theta,
                     "top_n": gate.top_n,
                     "priority_classes": sorted(gate.priority_classes),
                     "desired_accuracy": gate.desired_accuracy},
        },
        "result": _result_to_dict(result),
        "sim": report_to_dict(result.sim_report) if result.sim_report else None,
    }
    print(json.dumps(doc, sort_keys=True))
    if args.out:
        with open(args.out, "w") as f:
            if result.sim_report:
                f.write(report_to_csv(result.sim_report, model.conv_stages))
    return 0


def cmd_sweep(args) -> int:
    model = _load_model_file(args.model)
    images, labels = load_dataset(args.data, args.dataset, model)
    if images.shape[0] == 0:
        raise ValueError("dataset is empty")
    if args.gammas:
        gammas = [float(x) for x in args.gammas.split(",")]
    elif args.calibration:
        with open(args.calibration) as f:
            gammas = default_gamma_grid(calibration_from_json(f.read()))
    else:
        gammas = [i / 8 for i in range(9)]
    cfg = RunConfig(_gate_from_args(args), batch_size=args.batch, mode=_run_mode(args))
    rows = sweep_gamma(model, images, labels, gammas, cfg)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["gamma", "accuracy", "flops_fraction", "throughput"])
    for gamma, acc, frac, tput in rows:
        writer.writerow([gamma, "" if acc is None else acc, frac,
                         "" if tput is None else tput])
    text = buf.getvalue()
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    return 0


def cmd_simulate(args) -> int:
    if args.survivors:
        survivors = [int(x) for x in args.survivors.split(",")]
        model = _load_model_file(args.model)
        batch = survivors[0] if args.batch is None else args.batch
    elif args.data is None:
        raise ValueError("simulate needs either --survivors or --data")
    else:
        model = _load_model_file(args.model)
        images, labels = load_dataset(args.data, args.dataset, model)
        cfg = RunConfig(_gate_from_args(args), mode=MODE_COMPUTE)
        result = run_batch(model, images, labels, cfg)
        survivors = list(result.survivors)
        batch = images.shape[0]

    config_values = [args.config_ms] if args.config_ms_sweep is None else \
        [float(x) for x in args.config_ms_sweep.split(",")]
    reports = []
    for config_ms in config_values:
        report = simulate_batch(model.conv_stages, survivors, batch,
                                mode="fpga" if args.mode == "fpga" else "cpu",
                                gate_ms_per_image=args.gate_ms,
                                config_ms_override=config_ms)
        reports.append(report_to_dict(report))
    print(json.dumps(reports[0] if len(reports) == 1 else reports, sort_keys=True))
    if args.out:
        with open(args.out, "w") as f:
            f.write(report_to_csv(
                simulate_batch(model.conv_stages, survivors, batch,
                               mode="fpga" if args.mode == "fpga" else "cpu",
                               gate_ms_per_image=args.gate_ms,
                               config_ms_override=config_values[0]),
                model.conv_stages))
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_gate_flags(p: argparse.ArgumentParser):
    p.add_argument("--gate", choices=["confidence", "entropy"], default="confidence")
    p.add_argument("--gamma", type=float, default=0.8)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--top-n", dest="top_n", type=int, default=5)
    p.add_argument("--priority", default="", help="comma-separated class indices")
    p.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help="desired accuracy")


def _add_data_flags(p: argparse.ArgumentParser):
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dataset", choices=["cifar10", "cifar100", "raw"],
                   default="cifar10")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ahcnn",
                                     description="Staged quantized CNN inference "
                                     "with adaptive early exit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-model", help="write a random demo weight file")
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=["tiny", "resnet18"], default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo_model)

    p = sub.add_parser("demo-data", help="write a synthetic dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--dataset", choices=["cifar10", "cifar100", "raw"],
                   default="cifar10")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo_data)

    p = sub.add_parser("calibrate", help="collect per-stage confidences")
    _add_data_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="gated inference over a dataset")
    _add_data_flags(p)
    _add_gate_flags(p)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--mode", choices=["fpga", "cpu", "compute"], default="fpga")
    p.add_argument("--force-full", action="store_true")
    p.add_argument("--gamma-from-sweep", default=None,
                   help="CSV from the sweep command; picks gamma via --lambda")
    p.add_argument("--out", default=None, help="optional per-stage CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="trigger-point sweep (CSV)")
    _add_data_flags(p)
    _add_gate_flags(p)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--mode", choices=["fpga", "cpu", "compute"], default="fpga")
    p.add_argument("--gammas", default=None, help="comma-separated trigger points")
    p.add_argument("--calibration", default=None,
                   help="calibration JSON; uses the C_Mean + k*C_Std grid")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="reconfiguration cost model only")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--dataset", choices=["cifar10", "cifar100", "raw"],
                   default="cifar10")
    _add_gate_flags(p)
    p.add_argument("--survivors", default=None, help="comma-separated counts")
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--mode", choices=["fpga", "cpu"], default="fpga")
    p.add_argument("--config-ms", dest="config_ms", type=float, default=None)
    p.add_argument("--config-ms-sweep", dest="config_ms_sweep", default=None,
                   help="comma-separated config times; emits one report each")
    p.add_argument("--gate-ms", dest="gate_ms", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # machine-readable failure envelope
        json.dump({"error": type(e).__name__, "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
