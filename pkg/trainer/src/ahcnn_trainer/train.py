"""Training loop: SGD with the step learning-rate schedule, joint branch
loss, and checkpoint selection by deepest-branch validation accuracy."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset

from .losses import joint_loss
from .model import INPUT_SCALE, QMAX, StagedQuantNet


@dataclass
class TrainConfig:
    data_path: str
    epochs: int = 100
    batch_size: int = 256
    lr: float = 0.01
    lr_decay: float = 0.1
    lr_decay_every: int = 20
    momentum: float = 0.9
    seed: int = 0
    val_fraction: float = 0.2
    limit: int | None = None  # cap on images read from the file
    channels: tuple[int, ...] = (8, 16, 32)
    convs_per_stage: tuple[int, ...] = (1, 1, 1)
    num_classes: int = 10

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0 or self.lr_decay <= 0 or self.lr_decay_every < 1:
            raise ValueError("learning-rate schedule values must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainResult:
    net: StagedQuantNet
    epoch_losses: list[float]
    val_accuracies: list[list[float]]  # per epoch, per branch
    best_epoch: int


CIFAR10_RECORD = 3073


def load_cifar_bin(path: str, limit: int | None = None):
    """CIFAR binary batches -> (5-bit codes as float tensor, labels)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) % CIFAR10_RECORD:
        raise IOError(f"truncated CIFAR file: {len(blob)} bytes")
    n = len(blob) // CIFAR10_RECORD
    if limit is not None:
        n = min(n, limit)
    arr = np.frombuffer(blob, dtype=np.uint8, count=n * CIFAR10_RECORD)
    arr = arr.reshape(n, CIFAR10_RECORD)
    labels = torch.from_numpy(arr[:, 0].astype(np.int64))
    pixels = arr[:, 1:].reshape(n, 3, 32, 32).astype(np.float64) / 255.0
    codes = np.floor(pixels * QMAX + 0.5)  # same 5-bit grid the engine ingests
    x = torch.from_numpy((codes * INPUT_SCALE).astype(np.float32))
    return x, labels


def evaluate(net: StagedQuantNet, x: torch.Tensor, labels: torch.Tensor):
    """Per-branch accuracy."""
    net.eval()
    with torch.no_grad():
        logits = net(x)
    return [float((l.argmax(dim=1) == labels).float().mean()) for l in logits]


def train(cfg: TrainConfig) -> TrainResult:
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed)

    x, labels = load_cifar_bin(cfg.data_path, cfg.limit)
    if len(labels) == 0:
        raise IOError("empty training file")
    n_val = max(1, int(len(labels) * cfg.val_fraction))
    perm = torch.randperm(len(labels), generator=torch.Generator().manual_seed(cfg.seed))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_train, y_train = x[train_idx], labels[train_idx]
    x_val, y_val = x[val_idx], labels[val_idx]

    net = StagedQuantNet(cfg.channels, cfg.convs_per_stage, cfg.num_classes)
    opt = torch.optim.SGD(net.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.lr_decay_every,
                                            gamma=cfg.lr_decay)
    loader = DataLoader(TensorDataset(x_train, y_train), batch_size=cfg.batch_size,
                        shuffle=True,
                        generator=torch.Generator().manual_seed(cfg.seed + 1))

    epoch_losses: list[float] = []
    val_accuracies: list[list[float]] = []
    best_state, best_acc, best_epoch = copy.deepcopy(net.state_dict()), -1.0, -1
    for epoch in range(cfg.epochs):
        net.train()
        total, count = 0.0, 0
        for xb, yb in loader:
            opt.zero_grad()
            loss = joint_loss(net(xb), yb)
            loss.backward()
            opt.step()
            net.clamp_bn()
            total += float(loss.detach()) * len(yb)
            count += len(yb)
        sched.step()
        epoch_losses.append(total / count)
        accs = evaluate(net, x_val, y_val)
        val_accuracies.append(accs)
        # model selection: best accuracy of the deepest branch
        if accs[-1] > best_acc:
            best_acc, best_epoch = accs[-1], epoch
            best_state = copy.deepcopy(net.state_dict())

    if best_epoch >= 0:
        net.load_state_dict(best_state)
    net.eval()
    return TrainResult(net, epoch_losses, val_accuracies, best_epoch)
