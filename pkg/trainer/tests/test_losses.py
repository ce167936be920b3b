import math

import pytest
import torch

from ahcnn_trainer import joint_loss


def test_huge_margin_is_near_zero():
    logits = torch.zeros(4, 3)
    labels = torch.tensor([0, 1, 2, 0])
    logits[torch.arange(4), labels] = 50.0
    assert float(joint_loss([logits], labels)) < 1e-6


def test_uniform_logits_give_log_num_classes():
    logits = torch.zeros(8, 10)
    labels = torch.randint(0, 10, (8,))
    assert float(joint_loss([logits], labels)) == pytest.approx(math.log(10))


def test_identical_branches_sum():
    torch.manual_seed(0)
    logits = torch.randn(16, 5)
    labels = torch.randint(0, 5, (16,))
    one = float(joint_loss([logits], labels))
    three = float(joint_loss([logits, logits.clone(), logits.clone()], labels))
    assert three == pytest.approx(3 * one, rel=1e-6)


def test_gradient_flows_to_every_branch():
    torch.manual_seed(1)
    branches = [torch.randn(6, 4, requires_grad=True) for _ in range(3)]
    labels = torch.randint(0, 4, (6,))
    joint_loss(branches, labels).backward()
    for b in branches:
        assert b.grad is not None and float(b.grad.abs().sum()) > 0


def test_empty_branch_list_rejected():
    with pytest.raises(ValueError):
        joint_loss([], torch.tensor([0]))


def test_batch_mismatch_rejected():
    with pytest.raises(ValueError):
        joint_loss([torch.zeros(3, 2)], torch.tensor([0, 1]))
