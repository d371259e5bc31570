import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from move_vlt.autodiff import Tensor
from move_vlt.move import (
    MixCoefficients,
    apply_move_batch,
    calibrate_labels,
    calibrated_interpolate,
    draw_lambda,
    draw_omega,
    extrapolate,
)

unit = st.floats(0, 1)


# -- extrapolation --------------------------------------------------------


def test_omega_one_returns_first_view():
    u, v = np.array([1.0, 2.0]), np.array([-3.0, 5.0])
    z, y = extrapolate(u, v, [0, 1], omega=1.0)
    np.testing.assert_array_equal(z, u)
    np.testing.assert_array_equal(y, [0, 1])


def test_omega_two_example():
    z, _ = extrapolate(np.array([1.0, 0.0]), np.array([0.0, 1.0]), [1], omega=2.0)
    np.testing.assert_array_equal(z, [2.0, -1.0])


def test_identical_views_are_fixed(rng):
    u = rng.standard_normal(6)
    for _ in range(20):
        z, _ = extrapolate(u, u.copy(), [1], alpha=2.0, rng=rng)
        np.testing.assert_allclose(z, u, atol=1e-14)


def test_extrapolation_shape_mismatch():
    with pytest.raises(ValueError):
        extrapolate(np.zeros(3), np.zeros(4), [1], omega=1.5)


def test_extrapolated_point_lies_beyond_first_view(rng):
    for _ in range(200):
        u, v = rng.standard_normal(5), rng.standard_normal(5)
        z, _ = extrapolate(u, v, [1], alpha=2.0, rng=rng)
        # z = u + (w - 1)(u - v) with w - 1 in [0, 1]
        d = u - v
        t = (z - u) @ d / (d @ d)
        np.testing.assert_allclose(z, u + t * d, atol=1e-12)
        assert 0.0 <= t <= 1.0


def beta_central_moment(a, k):
    norm = math.gamma(2 * a) / math.gamma(a) ** 2
    return quad(lambda x: (x - 0.5) ** k * norm * (x * (1 - x)) ** (a - 1), 0, 1)[0]


def check_moments(samples, mean, a):
    n = samples.size
    var = beta_central_moment(a, 2)
    m4 = beta_central_moment(a, 4)
    assert abs(samples.mean() - mean) < 3 * math.sqrt(var / n)
    assert abs(samples.var() - var) < 3 * math.sqrt((m4 - var ** 2) / n)


def test_coefficient_moments():
    rng = np.random.default_rng(0)
    omega = draw_omega(2.0, rng, size=100_000)
    lam = draw_lambda(2.0, rng, size=100_000)
    assert beta_central_moment(2.0, 2) == pytest.approx(0.05)
    check_moments(omega, 1.5, 2.0)
    check_moments(lam, 0.5, 2.0)
    assert omega.min() >= 1 and omega.max() <= 2
    assert lam.min() >= 0 and lam.max() <= 1


def test_mix_coefficients_validation():
    MixCoefficients(1.0, 0.0, 2.0)
    with pytest.raises(ValueError):
        MixCoefficients(0.9, 0.5, 2.0)
    with pytest.raises(ValueError):
        MixCoefficients(1.5, 1.1, 2.0)


# -- calibrated interpolation --------------------------------------------


@pytest.mark.parametrize(
    "lam, yi, yj, tau, expected",
    [(1.0, 1.0, 0.0, 0.0, 1.0), (1.0, 1.0, 0.0, 1.0, 0.5), (0.5, 1.0, 0.0, 0.5, 0.5)],
)
def test_calibration_examples(lam, yi, yj, tau, expected):
    out = calibrated_interpolate(np.zeros(2), [yi], np.ones(2), [yj], [tau], gamma=0.5, lam=lam)
    assert out.label[0] == pytest.approx(expected, abs=1e-15)
    np.testing.assert_allclose(out.feature, [1 - lam] * 2)


def test_calibration_rejects_nonpositive_gamma():
    with pytest.raises(ValueError):
        calibrated_interpolate(np.zeros(1), [1], np.zeros(1), [1], [0.5], gamma=0.0, lam=0.5)


@settings(max_examples=300, deadline=None)
@given(unit, arrays(np.float64, 4, elements=unit), arrays(np.float64, 4, elements=unit),
       arrays(np.float64, 4, elements=unit), st.floats(1e-3, 3.0))
def test_calibrated_labels_bounded(lam, yi, yj, tau, gamma):
    y = calibrated_interpolate(np.zeros(1), yi, np.zeros(1), yj, tau, gamma=gamma, lam=lam).label
    assert np.all((y >= 0) & (y <= 1))


@settings(max_examples=300, deadline=None)
@given(unit, unit, unit, unit, unit, st.floats(1e-3, 3.0))
def test_calibration_non_increasing_in_tau(lam, yi, yj, t1, t2, gamma):
    lo, hi = min(t1, t2), max(t1, t2)
    mixed = np.array([lam * yi + (1 - lam) * yj])
    assert calibrate_labels(mixed, np.array([hi]), gamma)[0] <= calibrate_labels(mixed, np.array([lo]), gamma)[0]


# -- batches --------------------------------------------------------------


def test_single_instance_batch_pairs_with_itself(rng):
    u = rng.standard_normal((1, 3))
    y = np.array([[1.0, 0.0]])
    tau = np.array([0.2, 0.9])
    out = apply_move_batch(u, u.copy(), y, tau, rng=rng)
    np.testing.assert_array_equal(out.perm, [0])
    np.testing.assert_allclose(out.features, u, atol=1e-14)
    np.testing.assert_allclose(out.labels, np.minimum(y * ((1 - tau) + 0.5), 1))


def test_large_gamma_recovers_clamped_mixup(rng):
    z = rng.standard_normal((6, 3))
    y = np.eye(6)[:, :4] + np.eye(6)[:, 2:]
    out = apply_move_batch(z, z, y, np.zeros(4), gamma=1.0, rng=rng, extrapolation=False)
    mix = out.lam[:, None] * y + (1 - out.lam[:, None]) * y[out.perm]
    np.testing.assert_allclose(out.labels, np.minimum(mix * 2.0, 1.0))


def test_batch_reproducible():
    gen = np.random.default_rng(3)
    u, v = gen.standard_normal((4, 5)), gen.standard_normal((4, 5))
    y = np.eye(4)
    tau = np.array([1.0, 0.6, 0.2, 0.0])
    a = apply_move_batch(u, v, y, tau, rng=np.random.default_rng(8))
    b = apply_move_batch(u, v, y, tau, rng=np.random.default_rng(8))
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_batch_matches_per_instance_formulas():
    gen = np.random.default_rng(4)
    B, D = 5, 3
    u, v = gen.standard_normal((B, D)), gen.standard_normal((B, D))
    y = (gen.random((B, 4)) < 0.5).astype(float)
    tau = gen.random(4)
    out = apply_move_batch(u, v, y, tau, alpha=2.0, gamma=0.5, rng=np.random.default_rng(1))

    rng = np.random.default_rng(1)
    omega = rng.beta(2.0, 2.0, size=B) + 1
    perm = rng.permutation(B)
    lam = rng.beta(2.0, 2.0, size=B)
    zh = [extrapolate(u[i], v[i], y[i], omega=omega[i])[0] for i in range(B)]
    for i in range(B):
        ref = calibrated_interpolate(zh[i], y[i], zh[perm[i]], y[perm[i]], tau, 0.5, lam=lam[i])
        np.testing.assert_allclose(out.features[i], ref.feature, atol=1e-14)
        np.testing.assert_allclose(out.labels[i], ref.label, atol=1e-15)


def test_identical_views_reduce_to_interpolation():
    gen = np.random.default_rng(6)
    z = gen.standard_normal((4, 3))
    y = np.eye(4)
    tau = np.array([1.0, 0.5, 0.1, 0.0])
    full = apply_move_batch(z, z.copy(), y, tau, rng=np.random.default_rng(2))
    rng = np.random.default_rng(2)
    rng.beta(2.0, 2.0, size=4)  # omegas are drawn but have no effect when u == v
    interp = apply_move_batch(z, z, y, tau, rng=rng, extrapolation=False)
    np.testing.assert_allclose(full.features, interp.features, atol=1e-14)
    np.testing.assert_array_equal(full.labels, interp.labels)


def test_disabled_stages_leave_inputs():
    gen = np.random.default_rng(7)
    u, v = gen.standard_normal((3, 2)), gen.standard_normal((3, 2))
    y = np.eye(3)
    out = apply_move_batch(u, v, y, np.zeros(3), rng=gen, extrapolation=False, interpolation=False)
    np.testing.assert_array_equal(out.features, u)
    np.testing.assert_array_equal(out.labels, y)


def test_tensor_features_carry_gradients():
    gen = np.random.default_rng(9)
    u = Tensor(gen.standard_normal((3, 2)), requires_grad=True)
    v = Tensor(gen.standard_normal((3, 2)), requires_grad=True)
    out = apply_move_batch(u, v, np.eye(3), np.zeros(3), rng=np.random.default_rng(0))
    out.features.sum().backward()
    # every output row is an affine combination of rows, so total weight is B per column
    np.testing.assert_allclose(u.grad.sum(axis=0) + v.grad.sum(axis=0), 3.0, atol=1e-12)
    ref = apply_move_batch(u.data, v.data, np.eye(3), np.zeros(3), rng=np.random.default_rng(0))
    np.testing.assert_allclose(out.features.data, ref.features, atol=1e-15)
