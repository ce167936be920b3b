"""Staged quantized network for training: binary-weight convolutions with a
straight-through sign estimator, batch norm, 5-bit fake-quantized activations,
and one classifier head per stage.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

QMAX = 31
ACT_SCALE = 1.0 / 31.0
INPUT_SCALE = 1.0 / 31.0


def binarize_ste(w: torch.Tensor) -> torch.Tensor:
    """sign(w) in the forward pass, identity gradient; sign(0) = +1."""
    b = torch.where(w >= 0, torch.ones_like(w), -torch.ones_like(w))
    return w + (b - w).detach()


def quantize_act_ste(x: torch.Tensor, scale: float = ACT_SCALE) -> torch.Tensor:
    """clamp(round(x/scale), 0, 31) * scale with a straight-through gradient."""
    q = torch.clamp(torch.round(x / scale), 0, QMAX) * scale
    return x + (q - x).detach()


class BinConv2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, 3, 3))
        nn.init.xavier_uniform_(self.weight)
        self.stride = stride

    def forward(self, x):
        return F.conv2d(x, binarize_ste(self.weight), stride=self.stride, padding=1)


class QuantBlock(nn.Module):
    """conv -> BN -> 5-bit activation; matches one engine conv+threshold pair."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1,
                 act_scale: float = ACT_SCALE):
        super().__init__()
        self.conv = BinConv2d(in_ch, out_ch, stride)
        self.bn = nn.BatchNorm2d(out_ch)
        self.act_scale = act_scale

    def forward(self, x):
        return quantize_act_ste(self.bn(self.conv(x)), self.act_scale)

    def clamp_bn(self, min_gamma: float = 1e-3):
        # positive BN slope keeps the folded integer thresholds non-decreasing
        with torch.no_grad():
            self.bn.weight.clamp_(min=min_gamma)


class BinLinear(nn.Module):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        nn.init.xavier_uniform_(self.weight)
        self.bias = nn.Parameter(torch.zeros(out_features))

    def forward(self, x):
        return F.linear(x, binarize_ste(self.weight), self.bias)


class StagedQuantNet(nn.Module):
    """Three sequential conv stages plus a shared head with per-stage
    classifiers; forward returns the logits of every branch."""

    def __init__(self, channels=(8, 16, 32), convs_per_stage=(1, 1, 1),
                 num_classes: int = 10, in_ch: int = 3,
                 act_scale: float = ACT_SCALE):
        super().__init__()
        self.channels = tuple(channels)
        self.num_classes = num_classes
        self.act_scale = act_scale
        stages = []
        prev = in_ch
        for i, (ch, n_convs) in enumerate(zip(channels, convs_per_stage)):
            blocks = []
            stride = 1 if i == 0 else 2
            for _ in range(n_convs):
                blocks.append(QuantBlock(prev, ch, stride, act_scale))
                prev, stride = ch, 1
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.heads = nn.ModuleList(BinLinear(ch, num_classes) for ch in channels)

    def forward(self, x):
        logits = []
        for stage, head in zip(self.stages, self.heads):
            x = stage(x)
            pooled = x.mean(dim=(2, 3))
            logits.append(head(pooled))
        return logits

    def clamp_bn(self):
        for stage in self.stages:
            for block in stage:
                block.clamp_bn()
