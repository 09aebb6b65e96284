import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fadc import autodiff as ad
from fadc.conv import (adaptive_dilated_conv2d, dilated_conv2d, grid_offsets, init_predictor,
                       predict_dilation)
from fadc.spectrum import dft2


def naive_conv(x, w, d, bias=None):
    """Loop-by-loop dilated convolution with zero padding."""
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    r = k // 2
    out = np.zeros((n, co, h, wd))
    for b in range(n):
        for o in range(co):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0 if bias is None else bias[o]
                    for c in range(ci):
                        for a in range(k):
                            for e in range(k):
                                y, xx = i + (a - r) * d, j + (e - r) * d
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += w[o, c, a, e] * x[b, c, y, xx]
                    out[b, o, i, j] = acc
    return out


def bilinear_point(img, y, x):
    h, w = img.shape
    y0, x0 = math.floor(y), math.floor(x)
    total = 0.0
    for yy, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
        for xx, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
            if 0 <= yy < h and 0 <= xx < w:
                total += wy * wx * img[yy, xx]
    return total


def tapwise_oracle(x, w, dmap, mod=None):
    """Per-pixel, per-tap evaluation of the fractional-dilation sum."""
    n, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    offs = grid_offsets(k)
    out = np.zeros((n, co, h, wd))
    for b in range(n):
        for i in range(h):
            for j in range(wd):
                d = dmap[b, 0, i, j]
                for t, (oy, ox) in enumerate(offs):
                    m = 1.0 if mod is None else mod[b, t, i, j]
                    for c in range(ci):
                        s = bilinear_point(x[b, c], i + oy * d, j + ox * d)
                        for o in range(co):
                            out[b, o, i, j] += m * w[o, c, oy + k // 2, ox + k // 2] * s
    return out


def test_grid_offsets_row_major():
    assert grid_offsets(3)[0].tolist() == [-1, -1]
    assert grid_offsets(3)[4].tolist() == [0, 0]
    with pytest.raises(ValueError):
        grid_offsets(4)


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_identity_kernel(d):
    x = np.random.default_rng(d).normal(size=(2, 1, 7, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    assert np.array_equal(dilated_conv2d(x, w, d), x)


def test_all_ones_kernel_interior():
    y = dilated_conv2d(np.full((1, 1, 6, 6), 0.3), np.ones((1, 1, 3, 3)), 1)
    assert np.allclose(y[0, 0, 1:-1, 1:-1], 2.7, atol=1e-15)


def test_dilated_matches_zero_inflated_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 1, 8, 8))
    w = rng.normal(size=(1, 1, 3, 3))
    big = np.zeros((1, 1, 5, 5))
    big[..., ::2, ::2] = w
    assert np.abs(dilated_conv2d(x, w, 2) - dilated_conv2d(x, big, 1)).max() <= 1e-12


def test_dilated_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 7, 5))
    w = rng.normal(size=(2, 3, 3, 3))
    b = rng.normal(size=2)
    for d in (1, 2, 3):
        assert np.abs(dilated_conv2d(x, w, d, b) - naive_conv(x, w, d, b)).max() <= 1e-12


def test_dilated_rejects_bad_inputs():
    with pytest.raises(ValueError):
        dilated_conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), 1)
    with pytest.raises(ValueError):
        dilated_conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), 1.5)


def test_linearity():
    rng = np.random.default_rng(2)
    x1, x2 = rng.normal(size=(2, 1, 2, 6, 6))
    w1, w2 = rng.normal(size=(2, 3, 2, 3, 3))
    dmap = rng.uniform(0, 3, size=(1, 1, 6, 6))
    for f in (lambda x, w: dilated_conv2d(x, w, 2), lambda x, w: adaptive_dilated_conv2d(x, w, dmap)):
        assert np.abs(f(1.5 * x1 - 0.5 * x2, w1) - (1.5 * f(x1, w1) - 0.5 * f(x2, w1))).max() <= 1e-10
        assert np.abs(f(x1, 2.0 * w1 + w2) - (2.0 * f(x1, w1) + f(x1, w2))).max() <= 1e-10


# ---------------------------------------------------------------- adaptive


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 16), st.integers(3, 16), st.sampled_from([1, 2, 3, 4]), st.integers(0, 2**31 - 1))
def test_reduction_to_integer_dilation(h, w, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 2, h, w))
    k = rng.normal(size=(3, 2, 3, 3))
    dmap = np.full((2, 1, h, w), float(d))
    assert np.abs(adaptive_dilated_conv2d(x, k, dmap) - dilated_conv2d(x, k, d)).max() <= 1e-12


def test_zero_dilation_samples_centre():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    y = adaptive_dilated_conv2d(x, w, np.zeros((1, 1, 5, 5)))
    ref = np.einsum("oc,nchw->nohw", w.sum(axis=(2, 3)), x)
    assert np.abs(y - ref).max() <= 1e-12


def test_fractional_dilation_matches_tapwise_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 1, 8, 8))
    w = rng.normal(size=(1, 1, 3, 3))
    dmap = np.full((1, 1, 8, 8), 1.5)
    assert np.abs(adaptive_dilated_conv2d(x, w, dmap) - tapwise_oracle(x, w, dmap)).max() <= 1e-12


def test_varying_dilation_and_modulation_match_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 2, 6, 7))
    w = rng.normal(size=(2, 2, 3, 3))
    dmap = rng.uniform(0, 4, size=(2, 1, 6, 7))
    mod = rng.uniform(0, 1, size=(2, 9, 6, 7))
    got = adaptive_dilated_conv2d(x, w, dmap, mod)
    assert np.abs(got - tapwise_oracle(x, w, dmap, mod)).max() <= 1e-12


def test_per_sample_kernels():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(2, 3, 2, 3, 3))
    dmap = rng.uniform(0, 2, size=(2, 1, 5, 5))
    y = adaptive_dilated_conv2d(x, w, dmap)
    for n in range(2):
        assert np.abs(y[n] - adaptive_dilated_conv2d(x[n:n + 1], w[n], dmap[n:n + 1])[0]).max() <= 1e-12
        assert np.abs(dilated_conv2d(x, w, 2)[n] - dilated_conv2d(x[n:n + 1], w[n], 2)[0]).max() <= 1e-12


def test_negative_dilation_rejected():
    dmap = np.zeros((1, 1, 4, 4))
    dmap[0, 0, 1, 1] = -0.1
    with pytest.raises(ValueError):
        adaptive_dilated_conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)), dmap)


def test_output_is_lipschitz_in_dilation():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 1, 9, 9))
    w = rng.normal(size=(1, 1, 3, 3))
    dmap = rng.uniform(0.5, 3, size=(1, 1, 9, 9))
    y0 = adaptive_dilated_conv2d(x, w, dmap)
    # each tap moves by at most |offset| * eps, bilinear slope bounded by 2 max|x|
    bound = np.abs(w).sum() * 2 * 2 * np.abs(x).max()
    for eps in (1e-2, 1e-4, 1e-6):
        y1 = adaptive_dilated_conv2d(x, w, dmap + eps)
        assert np.abs(y1 - y0).max() <= bound * eps


def test_dilation_gradient_vanishes_for_identity_kernel():
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    x = np.random.default_rng(8).normal(size=(1, 1, 6, 6))
    tape = ad.Tape()
    dm = tape.leaf(np.full((1, 1, 6, 6), 0.5))
    g = tape.backward(ad.total(adaptive_dilated_conv2d(x, w, dm) * x))
    assert np.array_equal(g[dm.id], np.zeros((1, 1, 6, 6)))


# ---------------------------------------------------------------- predictor


def test_predictor_zero_init():
    x = np.random.default_rng(9).normal(size=(2, 3, 5, 5))
    th = init_predictor(3)
    dmap, mod = predict_dilation(x, th["w"], th["b"], 2.0)
    assert np.array_equal(dmap, np.full((2, 1, 5, 5), 2.0))
    assert np.array_equal(mod, np.full((2, 9, 5, 5), 0.5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 30.0))
def test_predictor_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 2, 5, 5))
    dmap, mod = predict_dilation(x, rng.normal(size=(10, 2, 3, 3)) * scale, rng.normal(size=10), 1.0,
                                 d_max=8.0)
    assert dmap.min() >= 0.0 and dmap.max() <= 8.0
    assert mod.min() >= 0.0 and mod.max() <= 1.0


def test_modulation_strictly_inside_unit_interval():
    rng = np.random.default_rng(10)
    x = rng.uniform(-1, 1, size=(1, 2, 5, 5))
    _, mod = predict_dilation(x, rng.uniform(-0.5, 0.5, size=(10, 2, 3, 3)), np.zeros(10), 1.0)
    assert np.all((mod > 0) & (mod < 1))


def test_predictor_channel_count_checked():
    with pytest.raises(ValueError):
        predict_dilation(np.zeros((1, 1, 4, 4)), np.zeros((5, 1, 3, 3)), np.zeros(5), 1.0)


# ---------------------------------------------------------------- frequency scaling


def impulse_response(w, d, n=32):
    x = np.zeros((1, 1, n, n))
    x[0, 0, n // 2, n // 2] = 1.0
    return dilated_conv2d(x, w, d)[0, 0]


@pytest.mark.parametrize("d", [2, 3, 4])
def test_dilated_response_is_frequency_scaled(d):
    """|H_D(f)| = |H_1(f * D)| on the DFT grid, frequencies wrapped modulo 1."""
    n = 32
    w = np.random.default_rng(d).normal(size=(1, 1, 3, 3))
    h1 = np.abs(np.fft.ifftshift(dft2(impulse_response(w, 1, n)).bins))
    hd = np.abs(np.fft.ifftshift(dft2(impulse_response(w, d, n)).bins))
    u = np.arange(n)
    scaled = h1[np.ix_((u * d) % n, (u * d) % n)]
    assert np.abs(hd - scaled).max() <= 1e-10
