import struct
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fgd.filters import (
    BilateralParams, FilterError, FilterTensor, LowpassOperator, apply_filter, as_image,
    brute_force_joint_bilateral, build_bilateral_tensor, ilvr_lowpass, resize_bilinear,
    residual_detail,
)


def separable_gaussian(x, sigma, r):
    """Truncated, boundary-renormalised Gaussian blur built from two 1-D matrices."""
    def mat(n):
        i = np.arange(n)
        d = i[:, None] - i[None, :]
        m = np.where(np.abs(d) <= r, np.exp(-d * d / (2 * sigma * sigma)), 0.0)
        return m / m.sum(axis=1, keepdims=True)
    return np.einsum("ih,hwc,jw->ijc", mat(x.shape[0]), x, mat(x.shape[1]))


def test_params_validation():
    with pytest.raises(FilterError):
        BilateralParams(0.0, 0.3)
    with pytest.raises(FilterError):
        BilateralParams(1.0, -1.0)
    with pytest.raises(FilterError):
        BilateralParams(1.0, 0.3, radius=0)
    assert BilateralParams(5.0, 0.35).window_radius == 15
    assert BilateralParams(0.2, 0.35).window_radius == 1
    assert BilateralParams(3.0, 0.2, radius=4).window_radius == 4


def test_as_image_rejects_bad_input():
    with pytest.raises(FilterError):
        as_image(np.zeros((0, 3)))
    with pytest.raises(FilterError):
        as_image(np.array([[np.nan]]))
    assert as_image(np.zeros((2, 3))).shape == (2, 3, 1)


def test_matches_brute_force_on_random_guide(rng):
    guide = rng.uniform(-1, 1, (16, 16, 3))
    params = BilateralParams(5.0, 0.35)
    f = build_bilateral_tensor(guide, params)
    for _ in range(10):
        x = rng.uniform(-1, 1, (16, 16, 4))
        assert np.max(np.abs(f.apply(x) - brute_force_joint_bilateral(guide, x, params))) <= 1e-6


def test_weights_stochastic_nonnegative_zero_outside(rng):
    guide = rng.uniform(-1, 1, (9, 7, 2))
    f = build_bilateral_tensor(guide, BilateralParams(2.0, 0.5))
    w = f.weights
    assert w.shape == (9, 7, (2 * 6 + 1) ** 2)
    assert np.all(w >= 0)
    assert np.max(np.abs(w.sum(axis=-1) - 1.0)) <= 1e-9
    n = 13
    window = w[0, 0].reshape(n, n)
    assert np.all(window[:6, :] == 0) and np.all(window[:, :6] == 0)
    assert window[6, 6] > 0


def test_constant_guide_gives_gaussian_blur(rng):
    guide = np.full((12, 10, 3), 0.3)
    params = BilateralParams(1.7, 0.2)
    f = build_bilateral_tensor(guide, params)
    x = rng.standard_normal((12, 10, 2))
    ref = separable_gaussian(x, 1.7, params.window_radius)
    assert np.max(np.abs(f.apply(x) - ref)) <= 1e-12


def test_one_pixel_is_identity(rng):
    g = rng.uniform(-1, 1, (1, 1, 3))
    f = build_bilateral_tensor(g, BilateralParams())
    assert f.weights[0, 0].sum() == 1.0
    assert np.count_nonzero(f.weights) == 1
    x = rng.standard_normal((1, 1, 5))
    assert f.apply(x).tobytes() == x.tobytes()
    assert np.array_equal(brute_force_joint_bilateral(g, x, BilateralParams()), x)


def test_constant_image_preserved(rng):
    f = build_bilateral_tensor(rng.uniform(-1, 1, (8, 8, 3)), BilateralParams(2.0, 0.1))
    out = f.apply(np.full((8, 8, 3), -0.7))
    assert np.max(np.abs(out + 0.7)) <= 1e-15
    assert np.max(np.abs(brute_force_joint_bilateral(np.zeros((8, 8, 1)), np.full((8, 8, 1), 0.2),
                                                     BilateralParams(2.0, 0.1)) - 0.2)) <= 1e-15


def test_channel_independence(rng):
    f = build_bilateral_tensor(rng.uniform(-1, 1, (10, 10, 3)), BilateralParams(2.0, 0.3))
    x = rng.standard_normal((10, 10, 4))
    full = f.apply(x)
    for c in range(4):
        assert np.array_equal(full[:, :, c], f.apply(x[:, :, c])[:, :, 0])


def test_dimension_mismatch(rng):
    f = build_bilateral_tensor(rng.uniform(-1, 1, (6, 6, 1)), BilateralParams(1.0, 0.3))
    with pytest.raises(FilterError):
        f.apply(np.zeros((6, 5, 1)))
    with pytest.raises(FilterError):
        brute_force_joint_bilateral(np.zeros((6, 6)), np.zeros((5, 6)), BilateralParams())


def test_apply_does_not_modify_input(rng):
    f = build_bilateral_tensor(rng.uniform(-1, 1, (6, 6, 1)), BilateralParams(1.0, 0.3))
    x = rng.standard_normal((6, 6, 2))
    keep = x.copy()
    apply_filter(f, x)
    assert np.array_equal(x, keep)


def test_residual_detail_definition(rng):
    f = build_bilateral_tensor(rng.uniform(-1, 1, (8, 8, 3)), BilateralParams(2.0, 0.3))
    x = rng.standard_normal((8, 8, 3))
    r = residual_detail(x, f)
    assert np.max(np.abs(apply_filter(f, x) + r - x)) <= 1e-15
    assert np.max(np.abs(residual_detail(np.full((8, 8, 3), 0.25), f))) <= 1e-15


def test_residual_vanishes_on_ramp_in_flat_guide_region(rng):
    # Inside a constant guide region the filter is a symmetric Gaussian, which
    # reproduces linear functions; the detail left over is zero there.
    guide = rng.uniform(-1, 1, (32, 32, 3))
    guide[4:28, 4:28] = 0.1
    params = BilateralParams(1.5, 0.2)  # radius 5
    f = build_bilateral_tensor(guide, params)
    yy, xx = np.mgrid[0:32, 0:32]
    ramp = (0.03 * yy - 0.02 * xx)[:, :, None]
    r = residual_detail(ramp, f)
    assert np.max(np.abs(r[9:23, 9:23])) <= 1e-6
    assert np.max(np.abs(r)) > 1e-3  # the noisy border is not reproduced


def test_fgdt_round_trip(tmp_path, rng):
    f = build_bilateral_tensor(rng.uniform(-1, 1, (5, 7, 3)), BilateralParams(1.0, 0.3))
    p = tmp_path / "f.fgdt"
    f.save(p)
    data = p.read_bytes()
    assert data[:4] == b"FGDT"
    assert struct.unpack("<3I", data[4:16]) == (5, 7, 3)
    assert len(data) == 16 + 5 * 7 * 49 * 4
    g = FilterTensor.load(p)
    assert g.shape == (5, 7) and g.radius == 3
    assert np.array_equal(g.weights, f.weights.astype(np.float32).astype(np.float64))
    x = rng.standard_normal((5, 7, 2))
    assert np.max(np.abs(g.apply(x) - f.apply(x))) <= 1e-6


def test_fgdt_rejects_bad_files(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(FilterError):
        FilterTensor.load(p)
    p.write_bytes(b"FGDT" + struct.pack("<3I", 2, 2, 1) + bytes(10))
    with pytest.raises(FilterError):
        FilterTensor.load(p)


def test_ilvr_ramp_hand_computed():
    yy, xx = np.mgrid[0:8, 0:8]
    ramp = (yy + xx).astype(float)
    # 4x4 block means of y + x: 3, 7 / 7, 11
    # half-pixel bilinear 2 -> 8 interpolation positions, clamped at the edges
    u = np.array([0, 0, 0.125, 0.375, 0.625, 0.875, 1, 1])
    expected = 3 + 4 * u[:, None] + 4 * u[None, :]
    out = ilvr_lowpass(ramp, 4)[:, :, 0]
    assert np.max(np.abs(out - expected)) <= 1e-12


def test_ilvr_trivial_cases(rng):
    x = rng.standard_normal((8, 6, 2))
    assert np.array_equal(ilvr_lowpass(x, 1), x)
    c = np.full((9, 7, 1), 0.4)
    for n in (2, 3, 4, 16):
        assert np.max(np.abs(ilvr_lowpass(c, n) - 0.4)) <= 1e-14
    with pytest.raises(FilterError):
        ilvr_lowpass(x, 0)


def test_ilvr_nearest_is_projection(rng):
    op = LowpassOperator(16, 16, 4, upsample="nearest")
    x = rng.standard_normal((16, 16, 3))
    once = op.apply(x)
    assert np.max(np.abs(op.apply(once) - once)) <= 1e-12


def test_resize_bilinear_preserves_constants_and_identity(rng):
    x = rng.standard_normal((5, 5, 2))
    assert np.max(np.abs(resize_bilinear(x, 5, 5) - x)) <= 1e-15
    assert np.max(np.abs(resize_bilinear(np.full((4, 6, 1), 0.5), 9, 3) - 0.5)) <= 1e-15


def test_apply_speed_64x64x4(rng):
    guide = rng.uniform(-1, 1, (64, 64, 3))
    t0 = time.perf_counter()
    f = build_bilateral_tensor(guide, BilateralParams(5.0, 0.35))
    build = time.perf_counter() - t0
    x = rng.uniform(-1, 1, (64, 64, 4))
    f.apply(x)
    times = []
    for _ in range(10):
        t0 = time.perf_counter()
        f.apply(x)
        times.append(time.perf_counter() - t0)
    assert build <= 1.0
    assert np.median(times) <= 0.010


images = arrays(np.float64, (6, 5, 2), elements=st.floats(-1, 1))


@given(images, images, st.floats(-3, 3), st.floats(-3, 3), st.floats(0.5, 3), st.floats(0.05, 1))
def test_linearity(x, y, a, b, ss, sv):
    guide = np.linspace(-1, 1, 6 * 5 * 3).reshape(6, 5, 3) ** 3
    f = build_bilateral_tensor(guide, BilateralParams(ss, sv))
    lhs = f.apply(a * x + b * y)
    rhs = a * f.apply(x) + b * f.apply(y)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9


@given(arrays(np.float64, (7, 6, 3), elements=st.floats(-1, 1)), st.floats(0.3, 4), st.floats(0.01, 2))
def test_rows_stochastic_property(guide, ss, sv):
    w = build_bilateral_tensor(guide, BilateralParams(ss, sv)).weights
    assert np.all(w >= 0)
    assert np.max(np.abs(w.sum(axis=-1) - 1.0)) <= 1e-9
