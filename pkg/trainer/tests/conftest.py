import numpy as np
import pytest


def make_cifar_file(path, n, num_classes=10, seed=7):
    """Synthetic CIFAR-10 binary batch: class-dependent channel means + noise."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    base = rng.uniform(40, 215, size=(num_classes, 3, 1, 1))
    noise = rng.normal(0, 25, size=(n, 3, 32, 32))
    pixels = np.clip(base[labels] + noise, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        for px, lb in zip(pixels, labels):
            f.write(bytes([int(lb)]))
            f.write(px.tobytes())
    return labels


@pytest.fixture
def cifar_maker():
    return make_cifar_file


@pytest.fixture(scope="session")
def cifar_500(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "train500.bin"
    make_cifar_file(path, 500, seed=7)
    return str(path)
