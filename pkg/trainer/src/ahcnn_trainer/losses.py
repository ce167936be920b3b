"""Joint multi-branch classification loss."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def joint_loss(branch_logits, labels: torch.Tensor) -> torch.Tensor:
    """Sum over branches of batch-mean cross-entropy.

    Every stage classifier is supervised with the same labels so the shallow
    branches learn to classify on their own.
    """
    if len(branch_logits) < 1:
        raise ValueError("need at least one branch")
    total = None
    for logits in branch_logits:
        if logits.shape[0] != labels.shape[0]:
            raise ValueError("branch batch size does not match labels")
        term = F.cross_entropy(logits, labels)
        total = term if total is None else total + term
    return total
