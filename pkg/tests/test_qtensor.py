import numpy as np
import pytest

from ahcnn.qtensor import FloatTensor, QTensor, dequantize, quantize

from oracles import quantize_scalar


def ft(values):
    return FloatTensor(np.asarray(values, dtype=np.float64).reshape(1, 1, 1, -1))


def test_zero_maps_to_zero():
    assert quantize(ft([0.0]), 1 / 31).data.ravel().tolist() == [0]


def test_full_scale_maps_to_max_code():
    assert quantize(ft([1.0]), 1 / 31).data.ravel().tolist() == [31]


def test_saturation_clamp():
    assert quantize(ft([2.0]), 1 / 31).data.ravel().tolist() == [31]


def test_non_positive_scale_rejected():
    with pytest.raises(ValueError):
        quantize(ft([1.0]), 0.0)
    with pytest.raises(ValueError):
        quantize(ft([1.0]), -0.5)


def test_quantize_matches_scalar_reference():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.0, 2.0, size=(2, 3, 4, 5))
    got = quantize(FloatTensor(x), 1 / 31).data
    expected = np.vectorize(lambda v: quantize_scalar(v, 1 / 31))(x)
    assert np.array_equal(got, expected)


def test_dequantize_trivial():
    q = QTensor(np.full((1, 1, 1, 1), 31, dtype=np.uint8), 1 / 31)
    assert dequantize(q).data.ravel()[0] == pytest.approx(1.0)
    q0 = QTensor(np.zeros((1, 1, 1, 1), dtype=np.uint8), 0.37)
    assert dequantize(q0).data.ravel()[0] == 0.0


def test_grid_round_trip_exact():
    rng = np.random.default_rng(1)
    for s in (1 / 31, 0.05, 3.0):
        codes = rng.integers(0, 32, size=(2, 2, 3, 3))
        x = FloatTensor(codes * s)
        back = dequantize(quantize(x, s))
        assert np.array_equal(back.data, x.data)


def test_monotonicity():
    rng = np.random.default_rng(2)
    a = rng.uniform(-1, 2, size=(1, 2, 4, 4))
    b = a + rng.uniform(0, 1, size=a.shape)
    qa = quantize(FloatTensor(a), 0.04).data
    qb = quantize(FloatTensor(b), 0.04).data
    assert np.all(qa <= qb)


def test_saturation_property():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1e6, 1e6, size=(1, 1, 8, 8))
    q = quantize(FloatTensor(x), 0.01).data
    assert q.min() >= 0 and q.max() <= 31


def test_invariants_enforced():
    with pytest.raises(ValueError):
        QTensor(np.full((1, 1, 1, 1), 32, dtype=np.int32), 1.0)
    with pytest.raises(ValueError):
        QTensor(np.zeros((1, 1, 1, 1), dtype=np.uint8), 0.0)


def test_immutability():
    q = QTensor(np.zeros((1, 1, 2, 2), dtype=np.uint8), 1.0)
    with pytest.raises(ValueError):
        q.data[0, 0, 0, 0] = 1
