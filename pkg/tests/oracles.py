"""Independent brute-force references the kernels are checked against.

Everything here is deliberately written as plain scalar loops, separate from
the vectorized implementations under test.
"""

import math

import numpy as np


def quantize_scalar(x, scale):
    v = x / scale
    q = math.floor(abs(v) + 0.5) * (1 if v >= 0 else -1)
    return min(max(q, 0), 31)


def conv2d_naive(inp, weights, stride, pad):
    """Quadruple-loop convolution; inp (N,C,H,W) ints, weights (O,C,kh,kw) +-1."""
    n, c, h, w = inp.shape
    co, ci, kh, kw = weights.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo), dtype=np.int64)
    for ni in range(n):
        for o in range(co):
            for y in range(ho):
                for x in range(wo):
                    s = 0
                    for i in range(ci):
                        for dy in range(kh):
                            for dx in range(kw):
                                yy = y * stride + dy - pad
                                xx = x * stride + dx - pad
                                if 0 <= yy < h and 0 <= xx < w:
                                    s += int(weights[o, i, dy, dx]) * int(inp[ni, i, yy, xx])
                    out[ni, o, y, x] = s
    return out


def threshold_scan(acc_value, thresholds_row):
    """Linear scan: number of thresholds <= acc."""
    count = 0
    for t in thresholds_row:
        if t <= acc_value:
            count += 1
    return count


def maxpool_naive(inp, k, stride):
    n, c, h, w = inp.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((n, c, ho, wo), dtype=inp.dtype)
    for ni in range(n):
        for ci in range(c):
            for y in range(ho):
                for x in range(wo):
                    best = 0
                    for dy in range(k):
                        for dx in range(k):
                            best = max(best, inp[ni, ci, y * stride + dy, x * stride + dx])
                    out[ni, ci, y, x] = best
    return out


def matvec_naive(x, weights, bias):
    """x (N,F) floats, weights (O,F) +-1, bias (O,)."""
    n, f = x.shape
    o = weights.shape[0]
    out = np.zeros((n, o), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            s = 0.0
            for fi in range(f):
                s += float(weights[oi, fi]) * float(x[ni, fi])
            out[ni, oi] = s + float(bias[oi])
    return out


def mean_std_two_pass(values):
    """Two-pass mean / population standard deviation."""
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def random_images(rng, n, shape=(3, 8, 8), scale=1 / 31):
    """Uniform random 5-bit code tensors for tests."""
    from ahcnn.qtensor import QTensor

    codes = rng.integers(0, 32, size=(n, *shape), dtype=np.uint8)
    return QTensor(codes, scale)
