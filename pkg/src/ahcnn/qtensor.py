"""Quantized tensor types and real <-> fixed-point conversion.

Activations are 5-bit unsigned codes with a shared per-tensor scale:
real value = code * scale, code in [0, 31].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QMAX = 31  # 5-bit unsigned activation range [0, QMAX]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QTensor:
    """4-D activation tensor of 5-bit codes (N, C, H, W) with a shared scale."""

    data: np.ndarray
    scale: float

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if data.ndim != 4:
            raise ValueError(f"QTensor data must be 4-D (N,C,H,W), got {data.ndim}-D")
        if data.size and data.max() > QMAX:
            raise ValueError(f"QTensor codes must lie in [0, {QMAX}]")
        if not (self.scale > 0):
            raise ValueError("QTensor scale must be positive")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def select(self, rows) -> "QTensor":
        """Batch-axis subset (used to route gate survivors)."""
        return QTensor(self.data[rows], self.scale)


@dataclass(frozen=True)
class AccumTensor:
    """Signed wide-accumulator tensor (pre-activation conv outputs)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.int32)
        if data.ndim != 4:
            raise ValueError(f"AccumTensor data must be 4-D, got {data.ndim}-D")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class FloatTensor:
    """Real-valued 4-D tensor (reference domain, pooled features)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise ValueError(f"FloatTensor data must be 4-D, got {data.ndim}-D")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


def _round_half_away(v: np.ndarray) -> np.ndarray:
    # np.round is round-half-even; the fixed-point grid uses half-away-from-zero
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def quantize(x: FloatTensor, scale: float) -> QTensor:
    """Map reals onto the 5-bit grid: clamp(round(x/scale), 0, 31)."""
    if not (scale > 0):
        raise ValueError("quantize: scale must be positive")
    codes = _round_half_away(x.data / scale)
    codes = np.clip(codes, 0, QMAX)
    return QTensor(codes.astype(np.uint8), scale)


def dequantize(q: QTensor) -> FloatTensor:
    """Back to the real domain: code * scale."""
    return FloatTensor(q.data.astype(np.float64) * q.scale)
