"""Quantized layer kernels: binary-weight conv, integer threshold activation,
pooling, binary fully connected, and softmax.

Weights are {-1,+1} stored bit-packed (bit=1 -> +1), row-major over
(out, in, kh, kw), LSB-first within 64-bit words. Batch norm is folded into
per-channel non-decreasing integer threshold arrays, so every layer up to the
classification head is integer-exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qtensor import QMAX, AccumTensor, FloatTensor, QTensor, _freeze


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a flat 0/1 array into uint64 words, LSB first. Padding bits are 0."""
    bits = np.ascontiguousarray(bits, dtype=np.uint64).ravel()
    n = bits.size
    n_words = (n + 63) // 64
    padded = np.zeros(n_words * 64, dtype=np.uint64)
    padded[:n] = bits
    shifts = np.arange(64, dtype=np.uint64)
    return (padded.reshape(n_words, 64) << shifts).sum(axis=1, dtype=np.uint64)


def unpack_bits(words: np.ndarray, n: int) -> np.ndarray:
    """Inverse of pack_bits: first n bits as a 0/1 uint8 array."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    shifts = np.arange(64, dtype=np.uint64)
    bits = (words[:, None] >> shifts) & np.uint64(1)
    return bits.ravel()[:n].astype(np.uint8)


@dataclass(frozen=True)
class BinaryWeights:
    """Bit-packed {-1,+1} weights, shape (out, in, kH, kW); FC uses kH=kW=1."""

    shape: tuple[int, int, int, int]
    words: np.ndarray

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        if len(shape) != 4 or any(d <= 0 for d in shape):
            raise ValueError(f"BinaryWeights shape must be 4 positive dims, got {shape}")
        n = int(np.prod(shape))
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.size != (n + 63) // 64:
            raise ValueError("BinaryWeights word count does not match shape")
        # padding bits beyond n must be zero so serialization is canonical
        if n % 64 and words.size:
            tail = int(words[-1]) >> (n % 64)
            if tail != 0:
                raise ValueError("BinaryWeights padding bits must be zero")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "words", _freeze(words))

    @classmethod
    def from_values(cls, values: np.ndarray) -> "BinaryWeights":
        """Pack a dense array of -1/+1 values."""
        values = np.asarray(values)
        if values.ndim == 2:  # FC convenience: (out, in) -> (out, in, 1, 1)
            values = values[:, :, None, None]
        if not np.all(np.isin(values, (-1, 1))):
            raise ValueError("binary weights must be -1 or +1")
        bits = (values.ravel() > 0).astype(np.uint64)
        return cls(values.shape, pack_bits(bits))

    def decode(self) -> np.ndarray:
        """Dense int32 array of -1/+1 values in self.shape."""
        n = int(np.prod(self.shape))
        bits = unpack_bits(self.words, n).astype(np.int32)
        return (2 * bits - 1).reshape(self.shape)

    @property
    def out_channels(self) -> int:
        return self.shape[0]

    @property
    def in_channels(self) -> int:
        return self.shape[1]


@dataclass(frozen=True)
class ThresholdParams:
    """Per-channel integer thresholds t[c][k], k = 1..31, non-decreasing in k.

    Activation code = number of thresholds <= accumulator value.
    """

    thresholds: np.ndarray  # (channels, 31) int32

    def __post_init__(self):
        t = np.ascontiguousarray(self.thresholds, dtype=np.int32)
        if t.ndim != 2 or t.shape[1] != QMAX:
            raise ValueError(f"thresholds must have shape (C, {QMAX})")
        if np.any(np.diff(t.astype(np.int64), axis=1) < 0):
            raise ValueError("threshold rows must be non-decreasing")
        object.__setattr__(self, "thresholds", _freeze(t))

    @property
    def channels(self) -> int:
        return self.thresholds.shape[0]

    @classmethod
    def identity(cls, channels: int) -> "ThresholdParams":
        """t[c][k] = k: activation equals clamp(acc, 0, 31)."""
        row = np.arange(1, QMAX + 1, dtype=np.int32)
        return cls(np.tile(row, (channels, 1)))


@dataclass(frozen=True)
class Logits:
    """Pre-softmax classifier outputs, shape (N, num_classes)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("Logits must be 2-D (N, num_classes)")
        object.__setattr__(self, "data", _freeze(data))


def binary_conv2d(input: QTensor, w: BinaryWeights, stride: int, pad: int) -> AccumTensor:
    """Integer convolution with {-1,+1} weights and zero padding (code 0)."""
    if stride <= 0:
        raise ValueError("stride must be positive")
    if pad < 0:
        raise ValueError("pad must be non-negative")
    n, c, h, ww = input.shape
    co, ci, kh, kw = w.shape
    if c != ci:
        raise ValueError(f"channel mismatch: input has {c}, weights expect {ci}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (ww + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0 or h + 2 * pad < kh or ww + 2 * pad < kw:
        raise ValueError("kernel does not fit the padded input")

    x = input.data.astype(np.int32)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    wd = w.decode()
    acc = np.zeros((n, co, ho, wo), dtype=np.int32)
    for dy in range(kh):
        for dx in range(kw):
            patch = x[:, :, dy : dy + (ho - 1) * stride + 1 : stride,
                      dx : dx + (wo - 1) * stride + 1 : stride]
            acc += np.einsum("nchw,oc->nohw", patch, wd[:, :, dy, dx])
    return AccumTensor(acc)


def threshold_activate(acc: AccumTensor, t: ThresholdParams, out_scale: float) -> QTensor:
    """Code = |{k : t[c][k] <= acc}|; realizes folded BN + 5-bit activation."""
    if not (out_scale > 0):
        raise ValueError("out_scale must be positive")
    n, c, h, w = acc.shape
    if c != t.channels:
        raise ValueError(f"channel mismatch: acc has {c}, thresholds have {t.channels}")
    out = np.empty((n, c, h, w), dtype=np.uint8)
    for ch in range(c):
        out[:, ch] = np.searchsorted(
            t.thresholds[ch], acc.data[:, ch].ravel(), side="right"
        ).reshape(n, h, w).astype(np.uint8)
    return QTensor(out, out_scale)


def maxpool2d(input: QTensor, k: int, stride: int) -> QTensor:
    """Per-window maximum; scale preserved."""
    if k <= 0 or stride <= 0:
        raise ValueError("pool size and stride must be positive")
    n, c, h, w = input.shape
    if h < k or w < k:
        raise ValueError("pool window larger than input")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((n, c, ho, wo), dtype=np.uint8)
    for dy in range(k):
        for dx in range(k):
            patch = input.data[:, :, dy : dy + (ho - 1) * stride + 1 : stride,
                               dx : dx + (wo - 1) * stride + 1 : stride]
            np.maximum(out, patch, out=out)
    return QTensor(out, input.scale)


def global_avgpool(input: QTensor) -> FloatTensor:
    """Per-channel mean of dequantized values, shape (N, C, 1, 1)."""
    means = input.data.astype(np.float64).mean(axis=(2, 3), keepdims=True)
    return FloatTensor(means * input.scale)


def fully_connected(input: FloatTensor, w: BinaryWeights, bias: np.ndarray) -> Logits:
    """z[n][o] = sum_i weight(o, i) * x[n][i] + bias[o] over flattened features."""
    n = input.shape[0]
    x = input.data.reshape(n, -1)
    co, ci, kh, kw = w.shape
    if kh != 1 or kw != 1:
        raise ValueError("fully connected weights must have 1x1 kernel shape")
    if x.shape[1] != ci:
        raise ValueError(f"feature mismatch: input has {x.shape[1]}, weights expect {ci}")
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (co,):
        raise ValueError(f"bias must have shape ({co},)")
    wd = w.decode().reshape(co, ci).astype(np.float64)
    return Logits(x @ wd.T + bias)


def softmax(z: Logits) -> np.ndarray:
    """Row-wise stable softmax; returns (N, num_classes) probabilities."""
    data = z.data
    if data.shape[1] < 1:
        raise ValueError("softmax needs at least one class")
    if np.any(np.isnan(data)):
        raise ValueError("softmax: NaN logits")
    shifted = data - data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
