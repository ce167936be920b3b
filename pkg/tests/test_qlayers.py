import math

import numpy as np
import pytest

from ahcnn.qlayers import (BinaryWeights, Logits, ThresholdParams, binary_conv2d,
                           fully_connected, global_avgpool, maxpool2d, pack_bits,
                           softmax, threshold_activate, unpack_bits)
from ahcnn.qtensor import AccumTensor, FloatTensor, QTensor

from oracles import conv2d_naive, matvec_naive, maxpool_naive, threshold_scan


def q(codes, scale=1.0):
    return QTensor(np.asarray(codes, dtype=np.uint8), scale)


# --- bit packing ---------------------------------------------------------

def test_pack_unpack_round_trip():
    rng = np.random.default_rng(0)
    for n in (1, 7, 63, 64, 65, 200, 1024):
        bits = rng.integers(0, 2, size=n)
        words = pack_bits(bits)
        assert np.array_equal(unpack_bits(words, n), bits)
        # repack is word-identical (canonical zero padding)
        assert np.array_equal(pack_bits(unpack_bits(words, n)), words)


def test_binary_weights_decode_values():
    w = np.array([[[[1, -1], [-1, 1]]]], dtype=np.int32)
    bw = BinaryWeights.from_values(w)
    assert np.array_equal(bw.decode(), w)


def test_binary_weights_reject_non_pm1():
    with pytest.raises(ValueError):
        BinaryWeights.from_values(np.zeros((1, 1, 1, 1)))


def test_binary_weights_reject_dirty_padding():
    with pytest.raises(ValueError):
        BinaryWeights((1, 1, 1, 1), np.array([0b10], dtype=np.uint64))


# --- binary conv ---------------------------------------------------------

def test_conv_identity_kernel():
    inp = q([[[[5]]]])
    w = BinaryWeights.from_values(np.ones((1, 1, 1, 1), dtype=np.int32))
    assert binary_conv2d(inp, w, 1, 0).data.ravel().tolist() == [5]


def test_conv_sum_and_negated_sum():
    inp = q(np.ones((1, 1, 3, 3)))
    w_pos = BinaryWeights.from_values(np.ones((1, 1, 3, 3), dtype=np.int32))
    w_neg = BinaryWeights.from_values(-np.ones((1, 1, 3, 3), dtype=np.int32))
    assert binary_conv2d(inp, w_pos, 1, 0).data.ravel().tolist() == [9]
    assert binary_conv2d(inp, w_neg, 1, 0).data.ravel().tolist() == [-9]


def test_conv_matches_naive_oracle():
    rng = np.random.default_rng(1)
    inp = q(rng.integers(0, 32, size=(2, 3, 8, 8)), 1 / 31)
    wv = rng.choice([-1, 1], size=(4, 3, 3, 3)).astype(np.int32)
    got = binary_conv2d(inp, BinaryWeights.from_values(wv), 1, 1).data
    assert np.array_equal(got, conv2d_naive(inp.data, wv, 1, 1))


def test_conv_strides_and_padding_against_oracle():
    rng = np.random.default_rng(2)
    for stride, pad, kh in [(1, 0, 1), (2, 1, 3), (3, 2, 3), (2, 0, 2)]:
        inp = q(rng.integers(0, 32, size=(1, 2, 7, 7)), 1.0)
        wv = rng.choice([-1, 1], size=(3, 2, kh, kh)).astype(np.int32)
        got = binary_conv2d(inp, BinaryWeights.from_values(wv), stride, pad).data
        assert np.array_equal(got, conv2d_naive(inp.data, wv, stride, pad))


def test_conv_channel_mismatch_rejected():
    inp = q(np.zeros((1, 2, 3, 3)))
    w = BinaryWeights.from_values(np.ones((1, 3, 3, 3), dtype=np.int32))
    with pytest.raises(ValueError):
        binary_conv2d(inp, w, 1, 0)


def test_conv_kernel_too_large_rejected():
    inp = q(np.zeros((1, 1, 2, 2)))
    w = BinaryWeights.from_values(np.ones((1, 1, 3, 3), dtype=np.int32))
    with pytest.raises(ValueError):
        binary_conv2d(inp, w, 1, 0)


def test_conv_linearity_in_input():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 16, size=(1, 2, 4, 4))
    b = rng.integers(0, 15, size=(1, 2, 4, 4))
    wv = rng.choice([-1, 1], size=(2, 2, 3, 3)).astype(np.int32)
    w = BinaryWeights.from_values(wv)
    ca = binary_conv2d(q(a), w, 1, 1).data
    cb = binary_conv2d(q(b), w, 1, 1).data
    cab = binary_conv2d(q(a + b), w, 1, 1).data
    assert np.array_equal(cab, ca + cb)


def test_conv_accumulator_bound():
    rng = np.random.default_rng(4)
    inp = q(np.full((1, 8, 5, 5), 31))
    wv = rng.choice([-1, 1], size=(4, 8, 3, 3)).astype(np.int32)
    acc = binary_conv2d(inp, BinaryWeights.from_values(wv), 1, 1).data
    assert np.abs(acc).max() <= 31 * 8 * 3 * 3


# --- threshold activation ------------------------------------------------

def test_identity_staircase():
    t = ThresholdParams.identity(1)
    for acc_val, expected in [(0, 0), (31, 31), (100, 31), (-5, 0), (7, 7)]:
        acc = AccumTensor(np.full((1, 1, 1, 1), acc_val, dtype=np.int32))
        assert threshold_activate(acc, t, 1.0).data.ravel()[0] == expected


def test_all_large_thresholds_give_zero():
    t = ThresholdParams(np.full((2, 31), 10**6, dtype=np.int32))
    acc = AccumTensor(np.arange(2 * 9, dtype=np.int32).reshape(1, 2, 3, 3))
    assert threshold_activate(acc, t, 1.0).data.max() == 0


def test_threshold_matches_scan_oracle():
    rng = np.random.default_rng(5)
    t = np.sort(rng.integers(-50, 50, size=(3, 31)), axis=1).astype(np.int32)
    acc = rng.integers(-80, 80, size=(2, 3, 4, 4)).astype(np.int32)
    got = threshold_activate(AccumTensor(acc), ThresholdParams(t), 0.1).data
    for n in range(2):
        for c in range(3):
            for y in range(4):
                for x in range(4):
                    assert got[n, c, y, x] == threshold_scan(acc[n, c, y, x], t[c])


def test_threshold_monotone_in_acc():
    rng = np.random.default_rng(6)
    t = ThresholdParams(np.sort(rng.integers(-20, 20, size=(1, 31)), axis=1).astype(np.int32))
    accs = np.arange(-30, 30)
    outs = [threshold_activate(AccumTensor(np.full((1, 1, 1, 1), a, dtype=np.int32)),
                               t, 1.0).data.ravel()[0] for a in accs]
    assert all(a <= b for a, b in zip(outs, outs[1:]))


def test_threshold_channel_mismatch_rejected():
    with pytest.raises(ValueError):
        threshold_activate(AccumTensor(np.zeros((1, 2, 1, 1), dtype=np.int32)),
                           ThresholdParams.identity(3), 1.0)


def test_non_monotone_thresholds_rejected():
    t = np.tile(np.arange(31, 0, -1, dtype=np.int32), (1, 1))
    with pytest.raises(ValueError):
        ThresholdParams(t.reshape(1, 31))


# --- pooling --------------------------------------------------------------

def test_maxpool_trivial():
    inp = q([[[[1, 2], [3, 4]]]])
    assert maxpool2d(inp, 2, 2).data.ravel().tolist() == [4]


def test_maxpool_matches_naive():
    rng = np.random.default_rng(7)
    inp = q(rng.integers(0, 32, size=(2, 3, 7, 7)), 0.5)
    for k, stride in [(2, 2), (3, 1), (2, 3)]:
        got = maxpool2d(inp, k, stride)
        assert got.scale == inp.scale
        assert np.array_equal(got.data, maxpool_naive(inp.data, k, stride))


def test_maxpool_window_too_large():
    with pytest.raises(ValueError):
        maxpool2d(q(np.zeros((1, 1, 2, 2))), 3, 1)


def test_global_avgpool_constant():
    inp = q(np.full((1, 2, 4, 4), 6), 0.25)
    out = global_avgpool(inp)
    assert out.shape == (1, 2, 1, 1)
    assert np.allclose(out.data, 6 * 0.25)


def test_global_avgpool_matches_mean():
    rng = np.random.default_rng(8)
    inp = q(rng.integers(0, 32, size=(2, 3, 5, 5)), 0.1)
    got = global_avgpool(inp).data
    expected = (inp.data.astype(float) * 0.1).mean(axis=(2, 3), keepdims=True)
    assert np.allclose(got, expected)


# --- fully connected ------------------------------------------------------

def fc_input(values):
    a = np.asarray(values, dtype=np.float64)
    return FloatTensor(a.reshape(a.shape[0], -1, 1, 1))


def test_fc_trivial():
    w = BinaryWeights.from_values(np.array([[1, -1]], dtype=np.int32))
    z = fully_connected(fc_input([[1.0, 2.0]]), w, np.zeros(1))
    assert z.data.ravel().tolist() == [-1.0]


def test_fc_zero_input_gives_bias():
    w = BinaryWeights.from_values(np.array([[1, 1], [-1, 1]], dtype=np.int32))
    bias = np.array([0.5, -2.0])
    z = fully_connected(fc_input([[0.0, 0.0]]), w, bias)
    assert np.allclose(z.data.ravel(), bias)


def test_fc_matches_matvec_oracle():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 6))
    wv = rng.choice([-1, 1], size=(4, 6)).astype(np.int32)
    bias = rng.normal(size=4)
    got = fully_connected(fc_input(x), BinaryWeights.from_values(wv), bias)
    assert np.allclose(got.data, matvec_naive(x, wv, bias), atol=1e-12)


def test_fc_dimension_mismatch():
    w = BinaryWeights.from_values(np.ones((2, 3), dtype=np.int32))
    with pytest.raises(ValueError):
        fully_connected(fc_input([[1.0, 2.0]]), w, np.zeros(2))


# --- softmax ---------------------------------------------------------------

def test_softmax_uniform():
    out = softmax(Logits(np.zeros((1, 4))))
    assert np.allclose(out, 0.25)


def test_softmax_analytic_two_class():
    out = softmax(Logits(np.array([[0.0, math.log(3.0)]])))
    assert np.allclose(out, [[0.25, 0.75]], atol=1e-12)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(10)
    z = rng.normal(size=(2, 5))
    assert np.allclose(softmax(Logits(z)), softmax(Logits(z + 7.3)), atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(11)
    z = rng.normal(scale=30, size=(50, 10))
    out = softmax(Logits(z))
    assert np.all(np.abs(out.sum(axis=1) - 1.0) < 1e-9)
    # argmax preserved, ties toward lowest index
    assert np.array_equal(out.argmax(axis=1), z.argmax(axis=1))


def test_softmax_rejects_nan():
    with pytest.raises(ValueError):
        softmax(Logits(np.array([[0.0, float("nan")]])))
