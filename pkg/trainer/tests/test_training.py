import time

import numpy as np
import pytest
import torch

import ahcnn
from ahcnn.qtensor import QTensor

from ahcnn_trainer import (TrainConfig, evaluate, export_model, load_cifar_bin,
                           simulate_int, train, write_weight_file)
from ahcnn_trainer.model import StagedQuantNet

def test_load_cifar_bin_shapes_and_range(cifar_500):
    x, labels = load_cifar_bin(cifar_500)
    assert x.shape == (500, 3, 32, 32)
    assert labels.shape == (500,)
    assert labels.min() >= 0 and labels.max() <= 9
    codes = x / (1 / 31)
    assert float((codes - codes.round()).abs().max()) < 1e-4
    assert 0.0 <= float(x.min()) and float(x.max()) <= 1.0


def test_load_cifar_bin_limit(cifar_500):
    x, labels = load_cifar_bin(cifar_500, limit=12)
    assert x.shape[0] == 12 and labels.shape[0] == 12


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(IOError):
        load_cifar_bin(str(path))


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        TrainConfig("x", lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig("x", batch_size=0)


def test_evaluate_reports_one_accuracy_per_branch():
    torch.manual_seed(0)
    net = StagedQuantNet((4, 6, 8), num_classes=5)
    x = torch.rand(8, 3, 8, 8)
    labels = torch.randint(0, 5, (8,))
    accs = evaluate(net, x, labels)
    assert len(accs) == 3
    assert all(0.0 <= a <= 1.0 for a in accs)


def test_training_is_deterministic_for_a_seed(cifar_500):
    cfg = TrainConfig(cifar_500, epochs=2, batch_size=64, seed=3, limit=200)
    a = train(cfg)
    b = train(cfg)
    assert a.epoch_losses == b.epoch_losses
    assert a.val_accuracies == b.val_accuracies


def test_tiny_scale_training_end_to_end(cifar_500):
    """500-image run: loss falls over the first epochs, the deepest branch is
    at least as accurate as the shallow ones (within 2 points), and the
    exported weights reproduce bit-identical predictions in the engine."""
    start = time.time()
    cfg = TrainConfig(cifar_500, epochs=25, batch_size=64, seed=0, limit=500)
    result = train(cfg)

    # loss strictly decreases over the first two epochs
    assert result.epoch_losses[1] < result.epoch_losses[0]
    assert result.epoch_losses[2] < result.epoch_losses[1]

    # deepest branch >= shallower branches - 2 points at the kept checkpoint
    best = result.val_accuracies[result.best_epoch]
    assert best[-1] >= best[0] - 0.02
    assert best[-1] >= best[1] - 0.02
    assert best[-1] > 0.3  # well above the 10-class chance rate

    # exported model loads in the engine and predicts bit-identically with
    # the trainer's own integer simulation on 10 probe images
    em = export_model(result.net)
    model = ahcnn.load_model(write_weight_file(em))
    rng = np.random.default_rng(0)
    probes = rng.integers(0, 32, size=(10, 3, 32, 32), dtype=np.uint8)
    sim = simulate_int(em, probes)
    cur = QTensor(probes, 1 / 31)
    for stage_id, (feat, probs, preds) in zip((1, 2, 3), sim):
        features, engine_probs = ahcnn.forward_stage(model, stage_id, cur)
        assert np.array_equal(features.data, feat)
        assert np.array_equal(engine_probs.argmax(axis=1), preds)
        cur = features

    assert time.time() - start < 600  # the whole exercise stays under 10 min


def test_empty_training_file_rejected(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    with pytest.raises(IOError):
        train(TrainConfig(str(path), epochs=1))


def test_cli_train_writes_engine_readable_file(tmp_path, cifar_maker):
    from ahcnn_trainer.cli import main

    data = tmp_path / "train.bin"
    cifar_maker(data, 120, seed=2)
    out = tmp_path / "weights.ahqn"
    rc = main(["train", "--data", str(data), "--epochs", "1", "--batch", "32",
               "--channels", "4", "6", "8", "--out", str(out)])
    assert rc == 0
    model = ahcnn.load_model(out.read_bytes())
    assert [s.id for s in model.stages] == [1, 2, 3, 4]


def test_cli_export_fresh_init(tmp_path):
    from ahcnn_trainer.cli import main

    out = tmp_path / "init.ahqn"
    rc = main(["export", "--seed", "1", "--channels", "4", "6", "8",
               "--out", str(out)])
    assert rc == 0
    assert ahcnn.load_model(out.read_bytes()).num_classes == 10
