"""Weight export: fold batch norm into integer threshold arrays and write the
inference engine's binary weight-file format, plus an integer simulation of
the exported network used to cross-check the engine bit for bit.

Folding: the engine computes integer accumulators acc over input codes; the
real pre-activation is acc * s_in, batch norm maps it to
A * acc + B with A = gamma * s_in / sqrt(var + eps) and
B = beta - gamma * mu / sqrt(var + eps). The activation code reaches k
exactly when the real output rounds to >= k, so
t[c][k] = ceil(((k - 0.5) * s_out - B) / A), which is non-decreasing in k
for A > 0.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .model import INPUT_SCALE, QMAX, StagedQuantNet

MAGIC = b"AHQN"
VERSION = 1
KIND_CONV, KIND_THRESH, KIND_MAXPOOL, KIND_AVGPOOL, KIND_FC = 1, 2, 3, 4, 5

I32_MAX = 2**31 - 1
I32_MIN = -(2**31)

# Table-2-style timing metadata carried in the file
CONFIG_MS = 40.0
FPGA_MS = 2.0
CPU_MS = (98.0, 57.0, 49.0)


@dataclass
class ConvLayer:
    weights: np.ndarray     # (out, in, 3, 3) int8 of +-1
    stride: int
    pad: int
    thresholds: np.ndarray  # (out, 31) int32
    out_scale: float


@dataclass
class HeadClassifier:
    weights: np.ndarray  # (classes, channels) int8 of +-1
    bias: np.ndarray     # (classes,) float32
    for_stage: int


@dataclass
class ExportedModel:
    input_shape: tuple[int, int, int]
    num_classes: int
    stages: list[list[ConvLayer]]
    heads: list[HeadClassifier]


class ExportError(Exception):
    pass


def fold_bn_to_thresholds(gamma, beta, mean, var, eps, in_scale, out_scale):
    """Per-channel integer thresholds t[c][k], k = 1..31 (see module docstring)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    inv = gamma / np.sqrt(var + eps)
    if np.any(inv <= 0):
        raise ExportError("BN slope must be positive for threshold folding")
    a = inv * in_scale
    b = beta - mean * inv
    channels = gamma.shape[0]
    t = np.empty((channels, QMAX), dtype=np.int64)
    for c in range(channels):
        for k in range(1, QMAX + 1):
            bound = ((k - 0.5) * out_scale - b[c]) / a[c]
            t[c, k - 1] = min(max(math.ceil(bound), I32_MIN), I32_MAX)
    return t.astype(np.int32)


def export_model(net: StagedQuantNet, input_hw=(32, 32),
                 in_scale: float = INPUT_SCALE) -> ExportedModel:
    """Snapshot a trained network as integer inference parameters."""
    net.eval()
    stages = []
    scale = in_scale
    for stage in net.stages:
        layers = []
        for block in stage:
            w = block.conv.weight.detach()
            if not torch.isfinite(w).all():
                raise ExportError("non-finite conv weights")
            wv = torch.where(w >= 0, 1, -1).to(torch.int8).numpy()
            bn = block.bn
            t = fold_bn_to_thresholds(
                bn.weight.detach().numpy(), bn.bias.detach().numpy(),
                bn.running_mean.numpy(), bn.running_var.numpy(), bn.eps,
                scale, block.act_scale)
            layers.append(ConvLayer(wv, block.conv.stride, 1, t, block.act_scale))
            scale = block.act_scale
        stages.append(layers)
    heads = []
    for sid, head in enumerate(net.heads, start=1):
        w = head.weight.detach()
        b = head.bias.detach()
        if not (torch.isfinite(w).all() and torch.isfinite(b).all()):
            raise ExportError("non-finite head parameters")
        heads.append(HeadClassifier(
            torch.where(w >= 0, 1, -1).to(torch.int8).numpy(),
            b.numpy().astype(np.float32), sid))
    c = net.stages[0][0].conv.weight.shape[1]
    return ExportedModel((c, *input_hw), net.num_classes, stages, heads)


# ---------------------------------------------------------------------------
# bit packing (LSB-first within 64-bit words, zero padding)

def _pack(values: np.ndarray) -> bytes:
    bits = (values.ravel() > 0).astype(np.uint64)
    n = bits.size
    n_words = (n + 63) // 64
    padded = np.zeros(n_words * 64, dtype=np.uint64)
    padded[:n] = bits
    words = (padded.reshape(n_words, 64) << np.arange(64, dtype=np.uint64)).sum(
        axis=1, dtype=np.uint64)
    return words.astype("<u8").tobytes()


def _unpack(blob: bytes, shape) -> np.ndarray:
    n = int(np.prod(shape))
    words = np.frombuffer(blob, dtype="<u8").astype(np.uint64)
    bits = ((words[:, None] >> np.arange(64, dtype=np.uint64)) & np.uint64(1))
    return (2 * bits.ravel()[:n].astype(np.int8) - 1).reshape(shape)


# ---------------------------------------------------------------------------
# file format

def _conv_flops(model: ExportedModel) -> list[int]:
    flops = []
    c, h, w = model.input_shape
    for layers in model.stages:
        total = 0
        for layer in layers:
            co, ci, kh, kw = layer.weights.shape
            h = (h + 2 * layer.pad - kh) // layer.stride + 1
            w = (w + 2 * layer.pad - kw) // layer.stride + 1
            total += co * h * w * ci * kh * kw
            c = co
        flops.append(total)
    return flops


def write_weight_file(model: ExportedModel) -> bytes:
    out = io.BytesIO()
    c, h, w = model.input_shape
    out.write(struct.pack("<4sIIIIII", MAGIC, VERSION, model.num_classes,
                          c, h, w, len(model.stages) + 1))
    flops = _conv_flops(model)
    for i, layers in enumerate(model.stages):
        out.write(struct.pack("<IQdddI", i + 1, flops[i], CONFIG_MS, FPGA_MS,
                              CPU_MS[i], 2 * len(layers)))
        for layer in layers:
            co, ci, kh, kw = layer.weights.shape
            payload = _pack(layer.weights)
            out.write(struct.pack("<BIIIIII", KIND_CONV, co, ci, kh, kw,
                                  layer.stride, layer.pad))
            out.write(struct.pack("<Q", len(payload)))
            out.write(payload)
            tpayload = struct.pack("<d", layer.out_scale) + \
                layer.thresholds.astype("<i4").tobytes()
            out.write(struct.pack("<BI", KIND_THRESH, co))
            out.write(struct.pack("<Q", len(tpayload)))
            out.write(tpayload)
    head_flops = sum(h2.weights.shape[0] * h2.weights.shape[1] for h2 in model.heads)
    out.write(struct.pack("<IQdddI", 4, head_flops, 0.0, 0.05, 1.0,
                          1 + len(model.heads)))
    out.write(struct.pack("<BQ", KIND_AVGPOOL, 0))
    for head in model.heads:
        co, ci = head.weights.shape
        payload = _pack(head.weights) + head.bias.astype("<f4").tobytes()
        out.write(struct.pack("<BIII", KIND_FC, co, ci, head.for_stage))
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)
    return out.getvalue()


def read_weight_file(blob: bytes) -> ExportedModel:
    """Parse a weight file this exporter produced (used for re-export checks)."""
    off = 0

    def take(fmt):
        nonlocal off
        st = struct.Struct(fmt)
        vals = st.unpack_from(blob, off)
        off += st.size
        return vals

    magic, version, num_classes, c, h, w, n_stages = take("<4sIIIIII")
    if magic != MAGIC or version != VERSION:
        raise ExportError("not a weight file this exporter understands")
    stages, heads = [], []
    for _ in range(n_stages):
        sid, _flops, _cfg, _fpga, _cpu, n_layers = take("<IQdddI")
        layers = []
        pending = None
        for _ in range(n_layers):
            (kind,) = take("<B")
            if kind == KIND_CONV:
                co, ci, kh, kw, stride, pad = take("<IIIIII")
                (plen,) = take("<Q")
                wv = _unpack(blob[off : off + plen], (co, ci, kh, kw))
                off += plen
                pending = (wv, stride, pad)
            elif kind == KIND_THRESH:
                (channels,) = take("<I")
                (plen,) = take("<Q")
                (scale,) = struct.unpack_from("<d", blob, off)
                t = np.frombuffer(blob, dtype="<i4", count=channels * QMAX,
                                  offset=off + 8).reshape(channels, QMAX)
                off += plen
                wv, stride, pad = pending
                layers.append(ConvLayer(wv, stride, pad, t.astype(np.int32), scale))
                pending = None
            elif kind == KIND_AVGPOOL:
                (plen,) = take("<Q")
                off += plen
            elif kind == KIND_FC:
                co, ci, for_stage = take("<III")
                (plen,) = take("<Q")
                n_words = (co * ci + 63) // 64
                wv = _unpack(blob[off : off + 8 * n_words], (co, ci))
                bias = np.frombuffer(blob, dtype="<f4", count=co,
                                     offset=off + 8 * n_words).astype(np.float32)
                off += plen
                heads.append(HeadClassifier(wv, bias, for_stage))
            else:
                raise ExportError(f"unexpected layer kind {kind}")
        if sid != 4:
            stages.append(layers)
    return ExportedModel((c, h, w), num_classes, stages, heads)


# ---------------------------------------------------------------------------
# integer simulation of the exported network

def _conv_int(codes: np.ndarray, weights: np.ndarray, stride: int, pad: int):
    n, c, h, w = codes.shape
    co, ci, kh, kw = weights.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    x = np.pad(codes.astype(np.int32), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    acc = np.zeros((n, co, ho, wo), dtype=np.int32)
    wd = weights.astype(np.int32)
    for dy in range(kh):
        for dx in range(kw):
            patch = x[:, :, dy : dy + (ho - 1) * stride + 1 : stride,
                      dx : dx + (wo - 1) * stride + 1 : stride]
            acc += np.einsum("nchw,oc->nohw", patch, wd[:, :, dy, dx])
    return acc


def _apply_thresholds(acc: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    n, c, h, w = acc.shape
    out = np.empty((n, c, h, w), dtype=np.uint8)
    for ch in range(c):
        out[:, ch] = (thresholds[ch][None, None, None, :] <=
                      acc[:, ch, :, :, None]).sum(axis=-1).astype(np.uint8)
    return out


def simulate_int(model: ExportedModel, codes: np.ndarray):
    """Integer forward over input codes; returns per-stage (features, probs,
    predicted labels). Features are exact 5-bit codes."""
    results = []
    cur = codes
    for layers, head in zip(model.stages, model.heads):
        scale = None
        for layer in layers:
            acc = _conv_int(cur, layer.weights, layer.stride, layer.pad)
            cur = _apply_thresholds(acc, layer.thresholds)
            scale = layer.out_scale
        pooled = cur.astype(np.float64).mean(axis=(2, 3), keepdims=True) * scale
        x = pooled.reshape(pooled.shape[0], -1)
        z = x @ head.weights.astype(np.float64).T + head.bias.astype(np.float64)
        e = np.exp(z - z.max(axis=1, keepdims=True))
        probs = e / e.sum(axis=1, keepdims=True)
        results.append((cur, probs, probs.argmax(axis=1)))
    return results
