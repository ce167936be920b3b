"""Staged network definition, weight-file serialization, per-stage forward
pass, and FLOPs accounting.

The network is split into conv stages 1-3 plus a shared head (stage 4,
static region): global average pooling and one binary fully connected
classifier per conv stage, keyed by stage id.

Weight file layout (all little-endian):
  magic "AHQN", version u32, num_classes u32, input C/H/W u32, stage count u32
  per stage: id u32, flops u64, config_ms f64, fpga_ms f64, cpu_ms f64,
             layer count u32
  per layer: kind u8, geometry u32 fields (per kind), payload length u64,
             payload bytes
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from . import qlayers
from .qtensor import QMAX, QTensor
from .qlayers import BinaryWeights, ThresholdParams

MAGIC = b"AHQN"
VERSION = 1

KIND_BINARY_CONV = "binary_conv"
KIND_THRESHOLD = "threshold_activate"
KIND_MAXPOOL = "maxpool"
KIND_GLOBAL_AVGPOOL = "global_avgpool"
KIND_FULLY_CONNECTED = "fully_connected"

_KIND_CODES = {
    KIND_BINARY_CONV: 1,
    KIND_THRESHOLD: 2,
    KIND_MAXPOOL: 3,
    KIND_GLOBAL_AVGPOOL: 4,
    KIND_FULLY_CONNECTED: 5,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


class ModelFormatError(Exception):
    """Base class for weight-file parse errors."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class ShapeCompositionError(ModelFormatError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a stage; payload fields depend on kind."""

    kind: str
    weights: BinaryWeights | None = None
    stride: int = 1
    pad: int = 0
    thresholds: ThresholdParams | None = None
    out_scale: float = 1.0
    pool_k: int = 1
    bias: np.ndarray | None = None
    for_stage: int = 0  # FC only: which conv stage this head classifier serves

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == KIND_BINARY_CONV and self.weights is None:
            raise ValueError("binary_conv layer needs weights")
        if self.kind == KIND_THRESHOLD and self.thresholds is None:
            raise ValueError("threshold_activate layer needs thresholds")
        if self.kind == KIND_FULLY_CONNECTED and (self.weights is None or self.bias is None):
            raise ValueError("fully_connected layer needs weights and bias")
        if self.bias is not None:
            b = np.ascontiguousarray(self.bias, dtype=np.float32)
            b.setflags(write=False)
            object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class StageSpec:
    """A reconfigurable conv stage (ids 1-3) or the shared head (id 4)."""

    id: int
    layers: tuple[LayerSpec, ...]
    flops: int
    config_ms: float
    fpga_exec_ms_per_image: float
    cpu_exec_ms_per_image: float

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.flops <= 0:
            raise ValueError("stage flops must be positive")
        if self.fpga_exec_ms_per_image <= 0 or self.cpu_exec_ms_per_image <= 0:
            raise ValueError("stage execution times must be positive")
        if self.id == 4:
            if self.config_ms != 0:
                raise ValueError("stage 4 lives in the static region: config_ms must be 0")
        elif self.config_ms <= 0:
            raise ValueError("conv stage config_ms must be positive")


@dataclass(frozen=True)
class StagedModel:
    """Stages 1-3 (conv groups) + stage 4 (shared pooling/FC head)."""

    stages: tuple[StageSpec, ...]
    num_classes: int
    input_shape: tuple[int, int, int]  # (C, H, W)
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        ids = [s.id for s in self.stages]
        if ids != [1, 2, 3, 4]:
            raise ValueError(f"model must contain exactly stages 1,2,3,4 in order, got {ids}")
        if self.num_classes <= 0:
            raise ValueError("num_classes must be positive")
        validate_composition(self)

    def stage(self, stage_id: int) -> StageSpec:
        return self.stages[stage_id - 1]

    @property
    def conv_stages(self) -> tuple[StageSpec, ...]:
        return self.stages[:3]

    def head_fc(self, stage_id: int) -> LayerSpec:
        """The head classifier serving a given conv stage."""
        for layer in self.stage(4).layers:
            if layer.kind == KIND_FULLY_CONNECTED and layer.for_stage in (0, stage_id):
                return layer
        raise ValueError(f"no head classifier for stage {stage_id}")

    def head_flops(self, stage_id: int) -> int:
        fc = self.head_fc(stage_id)
        return fc.weights.shape[0] * fc.weights.shape[1]


# ---------------------------------------------------------------------------
# shape inference / validation


def _layer_out_shape(layer: LayerSpec, shape: tuple[int, int, int]) -> tuple[int, int, int]:
    c, h, w = shape
    if layer.kind == KIND_BINARY_CONV:
        co, ci, kh, kw = layer.weights.shape
        if ci != c:
            raise ShapeCompositionError(f"conv expects {ci} channels, got {c}")
        ho = (h + 2 * layer.pad - kh) // layer.stride + 1
        wo = (w + 2 * layer.pad - kw) // layer.stride + 1
        if ho <= 0 or wo <= 0:
            raise ShapeCompositionError("conv output has non-positive spatial dims")
        return (co, ho, wo)
    if layer.kind == KIND_THRESHOLD:
        if layer.thresholds.channels != c:
            raise ShapeCompositionError(
                f"thresholds expect {layer.thresholds.channels} channels, got {c}")
        return shape
    if layer.kind == KIND_MAXPOOL:
        if h < layer.pool_k or w < layer.pool_k:
            raise ShapeCompositionError("pool window larger than input")
        return (c, (h - layer.pool_k) // layer.stride + 1,
                (w - layer.pool_k) // layer.stride + 1)
    if layer.kind == KIND_GLOBAL_AVGPOOL:
        return (c, 1, 1)
    if layer.kind == KIND_FULLY_CONNECTED:
        co, ci, _, _ = layer.weights.shape
        if ci != c * h * w:
            raise ShapeCompositionError(f"FC expects {ci} features, got {c * h * w}")
        return (co, 1, 1)
    raise AssertionError(layer.kind)


def infer_shapes(layers, in_shape: tuple[int, int, int]) -> list[tuple[int, int, int]]:
    """Output shape after each layer; raises ShapeCompositionError on mismatch."""
    shapes = []
    shape = in_shape
    for layer in layers:
        shape = _layer_out_shape(layer, shape)
        shapes.append(shape)
    return shapes


def validate_composition(model: StagedModel) -> None:
    """Conv stages must chain, and each head FC must fit its stage's features."""
    shape = model.input_shape
    stage_out = {}
    for stage in model.conv_stages:
        shapes = infer_shapes(stage.layers, shape)
        shape = shapes[-1] if shapes else shape
        stage_out[stage.id] = shape
    head = model.stage(4)
    if not any(l.kind == KIND_GLOBAL_AVGPOOL for l in head.layers):
        raise ShapeCompositionError("head stage must contain a global_avgpool layer")
    for sid, (c, _, _) in stage_out.items():
        fc = model.head_fc(sid)
        co, ci, _, _ = fc.weights.shape
        if ci != c:
            raise ShapeCompositionError(
                f"head classifier for stage {sid} expects {ci} features, stage emits {c}")
        if co != model.num_classes:
            raise ShapeCompositionError(
                f"head classifier for stage {sid} emits {co} classes, model has {model.num_classes}")


# ---------------------------------------------------------------------------
# forward pass


def _apply_conv_layers(layers, x: QTensor) -> QTensor:
    cur = x
    for layer in layers:
        if layer.kind == KIND_BINARY_CONV:
            cur = qlayers.binary_conv2d(cur, layer.weights, layer.stride, layer.pad)
        elif layer.kind == KIND_THRESHOLD:
            cur = qlayers.threshold_activate(cur, layer.thresholds, layer.out_scale)
        elif layer.kind == KIND_MAXPOOL:
            cur = qlayers.maxpool2d(cur, layer.pool_k, layer.stride)
        else:
            raise ValueError(f"layer kind {layer.kind!r} not allowed in a conv stage")
    if not isinstance(cur, QTensor):
        raise ValueError("conv stage must end on quantized activations")
    return cur


def forward_stage(model: StagedModel, stage_id: int, input: QTensor):
    """Run one conv stage and the shared head.

    Returns (features, probs): features feed the next stage, probs are the
    softmax outputs of this stage's head classifier.
    """
    if stage_id not in (1, 2, 3):
        raise ValueError("stage_id must be 1, 2, or 3")
    stage = model.stage(stage_id)
    expected = _stage_input_shape(model, stage_id)
    if input.shape[1:] != expected:
        raise ValueError(f"stage {stage_id} expects input shape {expected}, got {input.shape[1:]}")
    features = _apply_conv_layers(stage.layers, input)
    pooled = qlayers.global_avgpool(features)
    fc = model.head_fc(stage_id)
    logits = qlayers.fully_connected(pooled, fc.weights, fc.bias)
    return features, qlayers.softmax(logits)


def _stage_input_shape(model: StagedModel, stage_id: int) -> tuple[int, int, int]:
    shape = model.input_shape
    for stage in model.conv_stages:
        if stage.id == stage_id:
            return shape
        shapes = infer_shapes(stage.layers, shape)
        shape = shapes[-1] if shapes else shape
    raise AssertionError(stage_id)


def stage_flops(layers, in_shape: tuple[int, int, int]) -> int:
    """MAC count of a layer list for a given per-image input shape (C, H, W)."""
    flops = 0
    shape = in_shape
    for layer in layers:
        out = _layer_out_shape(layer, shape)
        if layer.kind == KIND_BINARY_CONV:
            co, ci, kh, kw = layer.weights.shape
            flops += out[0] * out[1] * out[2] * ci * kh * kw
        elif layer.kind == KIND_FULLY_CONNECTED:
            co, ci, _, _ = layer.weights.shape
            flops += co * ci
        shape = out
    return flops


# ---------------------------------------------------------------------------
# serialization

_HEADER = struct.Struct("<4sIIIIII")
_STAGE = struct.Struct("<IQdddI")
_LAYER_GEOM = {
    KIND_BINARY_CONV: 6,       # out, in, kH, kW, stride, pad
    KIND_THRESHOLD: 1,         # channels
    KIND_MAXPOOL: 2,           # k, stride
    KIND_GLOBAL_AVGPOOL: 0,
    KIND_FULLY_CONNECTED: 3,   # out_features, in_features, for_stage
}


def _layer_geometry(layer: LayerSpec) -> tuple[int, ...]:
    if layer.kind == KIND_BINARY_CONV:
        return (*layer.weights.shape, layer.stride, layer.pad)
    if layer.kind == KIND_THRESHOLD:
        return (layer.thresholds.channels,)
    if layer.kind == KIND_MAXPOOL:
        return (layer.pool_k, layer.stride)
    if layer.kind == KIND_GLOBAL_AVGPOOL:
        return ()
    return (layer.weights.shape[0], layer.weights.shape[1], layer.for_stage)


def _layer_payload(layer: LayerSpec) -> bytes:
    if layer.kind == KIND_BINARY_CONV:
        return layer.weights.words.astype("<u8").tobytes()
    if layer.kind == KIND_THRESHOLD:
        # out_scale travels as an f64 prefix ahead of the i32 threshold rows
        return struct.pack("<d", layer.out_scale) + \
            layer.thresholds.thresholds.astype("<i4").tobytes()
    if layer.kind == KIND_FULLY_CONNECTED:
        return layer.weights.words.astype("<u8").tobytes() + \
            layer.bias.astype("<f4").tobytes()
    return b""


def save_model(model: StagedModel) -> bytes:
    """Serialize to the canonical little-endian weight-file format."""
    out = io.BytesIO()
    c, h, w = model.input_shape
    out.write(_HEADER.pack(MAGIC, VERSION, model.num_classes, c, h, w, len(model.stages)))
    for stage in model.stages:
        out.write(_STAGE.pack(stage.id, stage.flops, stage.config_ms,
                              stage.fpga_exec_ms_per_image,
                              stage.cpu_exec_ms_per_image, len(stage.layers)))
        for layer in stage.layers:
            out.write(struct.pack("<B", _KIND_CODES[layer.kind]))
            for g in _layer_geometry(layer):
                out.write(struct.pack("<I", g))
            payload = _layer_payload(layer)
            out.write(struct.pack("<Q", len(payload)))
            out.write(payload)
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"file truncated: need {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def _read_layer(r: _Reader) -> LayerSpec:
    (code,) = struct.unpack("<B", r.take(1))
    kind = _CODE_KINDS.get(code)
    if kind is None:
        raise ModelFormatError(f"unknown layer kind code {code}")
    geom = struct.unpack(f"<{_LAYER_GEOM[kind]}I", r.take(4 * _LAYER_GEOM[kind])) \
        if _LAYER_GEOM[kind] else ()
    (plen,) = struct.unpack("<Q", r.take(8))
    payload = r.take(plen)

    if kind == KIND_BINARY_CONV:
        co, ci, kh, kw, stride, pad = geom
        n_words = (co * ci * kh * kw + 63) // 64
        if plen != 8 * n_words:
            raise ModelFormatError("conv payload size mismatch")
        words = np.frombuffer(payload, dtype="<u8").astype(np.uint64)
        return LayerSpec(kind, weights=BinaryWeights((co, ci, kh, kw), words),
                         stride=stride, pad=pad)
    if kind == KIND_THRESHOLD:
        (channels,) = geom
        if plen != 8 + 4 * channels * QMAX:
            raise ModelFormatError("threshold payload size mismatch")
        (out_scale,) = struct.unpack("<d", payload[:8])
        t = np.frombuffer(payload[8:], dtype="<i4").reshape(channels, QMAX)
        return LayerSpec(kind, thresholds=ThresholdParams(t.astype(np.int32)),
                         out_scale=out_scale)
    if kind == KIND_MAXPOOL:
        k, stride = geom
        return LayerSpec(kind, pool_k=k, stride=stride)
    if kind == KIND_GLOBAL_AVGPOOL:
        return LayerSpec(kind)
    co, ci, for_stage = geom
    n_words = (co * ci + 63) // 64
    if plen != 8 * n_words + 4 * co:
        raise ModelFormatError("fully connected payload size mismatch")
    words = np.frombuffer(payload[: 8 * n_words], dtype="<u8").astype(np.uint64)
    bias = np.frombuffer(payload[8 * n_words :], dtype="<f4").astype(np.float32)
    return LayerSpec(kind, weights=BinaryWeights((co, ci, 1, 1), words),
                     bias=bias, for_stage=for_stage)


def load_model(data: bytes) -> StagedModel:
    """Parse a weight file; raises a distinct ModelFormatError per defect."""
    r = _Reader(data)
    magic, version, num_classes, c, h, w, n_stages = r.unpack(_HEADER)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    stages = []
    for _ in range(n_stages):
        sid, flops, config_ms, fpga_ms, cpu_ms, n_layers = r.unpack(_STAGE)
        layers = tuple(_read_layer(r) for _ in range(n_layers))
        stages.append(StageSpec(sid, layers, flops, config_ms, fpga_ms, cpu_ms))
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after model")
    try:
        return StagedModel(tuple(stages), num_classes, (c, h, w))
    except ValueError as e:
        raise ModelFormatError(str(e)) from e


# ---------------------------------------------------------------------------
# model builders

# Table-2-style per-stage timing defaults: 40 ms config (38-42 ms midpoint),
# 2 ms/image FPGA, measured ARM times per stage.
DEFAULT_CONFIG_MS = 40.0
DEFAULT_FPGA_MS = 2.0
DEFAULT_CPU_MS = (98.0, 57.0, 49.0)


def _random_conv_group(rng, in_ch, out_ch, n_convs, first_stride, out_scale):
    layers = []
    c = in_ch
    stride = first_stride
    for _ in range(n_convs):
        w = rng.choice([-1, 1], size=(out_ch, c, 3, 3)).astype(np.int32)
        layers.append(LayerSpec(KIND_BINARY_CONV, weights=BinaryWeights.from_values(w),
                                stride=stride, pad=1))
        # sorted draws spread over the typical accumulator range keep the
        # activation codes (and downstream confidences) well distributed
        spread = 4.0 * c * 9
        t = np.sort(rng.normal(0.0, spread / 4.0, size=(out_ch, QMAX)), axis=1)
        layers.append(LayerSpec(KIND_THRESHOLD,
                                thresholds=ThresholdParams(np.round(t).astype(np.int32)),
                                out_scale=out_scale))
        c = out_ch
        stride = 1
    return layers


def build_random_model(seed: int = 0, input_shape=(3, 8, 8), channels=(4, 6, 8),
                       convs_per_stage=(1, 1, 1), num_classes: int = 5,
                       out_scale: float = 0.05) -> StagedModel:
    """Small random model for demos and tests (deterministic per seed)."""
    rng = np.random.default_rng(seed)
    stages = []
    shape = input_shape
    in_ch = input_shape[0]
    for i, (ch, n_convs) in enumerate(zip(channels, convs_per_stage)):
        stride = 1 if i == 0 else 2
        layers = _random_conv_group(rng, in_ch, ch, n_convs, stride, out_scale)
        flops = stage_flops(layers, shape)
        stages.append(StageSpec(i + 1, tuple(layers), flops, DEFAULT_CONFIG_MS,
                                DEFAULT_FPGA_MS, DEFAULT_CPU_MS[i]))
        shape = infer_shapes(layers, shape)[-1]
        in_ch = ch
    head_layers = [LayerSpec(KIND_GLOBAL_AVGPOOL)]
    head_flops = 0
    for sid, ch in zip((1, 2, 3), channels):
        w = rng.choice([-1, 1], size=(num_classes, ch)).astype(np.int32)
        bias = rng.normal(0.0, 0.5, size=num_classes).astype(np.float32)
        head_layers.append(LayerSpec(KIND_FULLY_CONNECTED,
                                     weights=BinaryWeights.from_values(w),
                                     bias=bias, for_stage=sid))
        head_flops += num_classes * ch
    stages.append(StageSpec(4, tuple(head_layers), head_flops, 0.0, 0.05, 1.0))
    return StagedModel(tuple(stages), num_classes, input_shape)


def resnet18_stage_geometry(input_shape=(3, 32, 32), channels=(16, 32, 64),
                            num_classes: int = 10):
    """Layer lists for the slim ResNet-18-shaped 32x32 reference split.

    Stage 1: stem conv + 4 convs at `channels[0]`; stages 2-3: stride-2
    entry conv + 3 convs. Returned as (per-stage layer lists, head layers);
    weights are placeholders (all +1) since only the geometry matters for
    FLOPs metadata.
    """

    def conv(ci, co, stride):
        w = BinaryWeights.from_values(np.ones((co, ci, 3, 3), dtype=np.int32))
        return [LayerSpec(KIND_BINARY_CONV, weights=w, stride=stride, pad=1),
                LayerSpec(KIND_THRESHOLD, thresholds=ThresholdParams.identity(co),
                          out_scale=0.125)]

    c1, c2, c3 = channels
    stage1 = conv(input_shape[0], c1, 1)
    for _ in range(4):
        stage1 += conv(c1, c1, 1)
    stage2 = conv(c1, c2, 2)
    for _ in range(3):
        stage2 += conv(c2, c2, 1)
    stage3 = conv(c2, c3, 2)
    for _ in range(3):
        stage3 += conv(c3, c3, 1)
    head = [LayerSpec(KIND_GLOBAL_AVGPOOL)]
    for sid, ch in zip((1, 2, 3), channels):
        w = BinaryWeights.from_values(np.ones((num_classes, ch), dtype=np.int32))
        head.append(LayerSpec(KIND_FULLY_CONNECTED, weights=w,
                              bias=np.zeros(num_classes, dtype=np.float32),
                              for_stage=sid))
    return [stage1, stage2, stage3], head


def build_resnet18_model(seed: int = 0, num_classes: int = 10) -> StagedModel:
    """Random-weight model with the slim ResNet-18 reference geometry."""
    rng = np.random.default_rng(seed)
    input_shape = (3, 32, 32)
    channels = (16, 32, 64)
    stages = []
    shape = input_shape
    in_ch = 3
    for i, ch in enumerate(channels):
        n_convs = 5 if i == 0 else 4
        layers = _random_conv_group(rng, in_ch, ch, n_convs, 1 if i == 0 else 2, 0.125)
        flops = stage_flops(layers, shape)
        stages.append(StageSpec(i + 1, tuple(layers), flops, DEFAULT_CONFIG_MS,
                                DEFAULT_FPGA_MS, DEFAULT_CPU_MS[i]))
        shape = infer_shapes(layers, shape)[-1]
        in_ch = ch
    head_layers = [LayerSpec(KIND_GLOBAL_AVGPOOL)]
    head_flops = 0
    for sid, ch in zip((1, 2, 3), channels):
        w = rng.choice([-1, 1], size=(num_classes, ch)).astype(np.int32)
        bias = rng.normal(0.0, 0.5, size=num_classes).astype(np.float32)
        head_layers.append(LayerSpec(KIND_FULLY_CONNECTED,
                                     weights=BinaryWeights.from_values(w),
                                     bias=bias, for_stage=sid))
        head_flops += num_classes * ch
    stages.append(StageSpec(4, tuple(head_layers), head_flops, 0.0, 0.05, 1.0))
    return StagedModel(tuple(stages), num_classes, input_shape)
