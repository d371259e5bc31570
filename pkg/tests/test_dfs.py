import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from move_vlt.dfs import FrameMask, kept_bounds, masks_to_csv_rows, sample_batch, sample_mask, sample_pair


def kept_histogram(tau, T, sigma, draws, seed=0):
    rng = np.random.default_rng(seed)
    hist = np.zeros(T + 1, dtype=np.int64)
    for _ in range(draws):
        hist[sample_mask(tau, T, sigma, rng).kept] += 1
    return hist


def test_head_class_keeps_everything(rng):
    for _ in range(50):
        np.testing.assert_array_equal(sample_mask(1.0, 9, 3, rng).bits, 1)


def test_short_video_collapses_to_full_mask(rng):
    assert kept_bounds(0.0, 2, 3) == (2, 2)
    np.testing.assert_array_equal(sample_mask(0.0, 2, 3, rng).bits, [1, 1])


def test_tail_class_bounds(rng):
    assert kept_bounds(0.0, 10, 3) == (3, 10)
    kept = {sample_mask(0.0, 10, 3, rng).kept for _ in range(2000)}
    assert kept == set(range(3, 11))


def test_lower_bound_uses_floor():
    assert kept_bounds(0.55, 10, 3) == (5, 10)
    assert kept_bounds(0.99, 10, 3) == (9, 10)


def test_kept_is_uniform_chi_square():
    hist = kept_histogram(0.0, 6, 3, 100_000)
    observed = hist[3:7]
    assert hist[:3].sum() == 0
    assert chisquare(observed).pvalue > 0.01


def test_positions_uniform_at_fixed_kept():
    rng = np.random.default_rng(1)
    T = 8
    per_pos = np.zeros(T, dtype=np.int64)
    for _ in range(20_000):
        bits = sample_mask(0.0, T, 1, rng).bits
        if bits.sum() == 3:
            per_pos += bits
    assert chisquare(per_pos).pvalue > 0.01


def test_pair_for_head_class_is_identical(rng):
    u, v = sample_pair(np.zeros((7, 2)), 1.0, 3, rng)
    np.testing.assert_array_equal(u.bits, v.bits)
    assert u.kept == 7


def test_pair_for_tail_class_varies(rng):
    same = 0
    for _ in range(200):
        u, v = sample_pair(np.zeros((10, 2)), 0.0, 3, rng)
        same += np.array_equal(u.bits, v.bits)
    assert same < 200


def test_same_rng_state_same_mask():
    a = sample_mask(0.3, 12, 2, np.random.default_rng(5))
    b = sample_mask(0.3, 12, 2, np.random.default_rng(5))
    np.testing.assert_array_equal(a.bits, b.bits)


def test_mean_kept_monotone_in_tau():
    means = [kept_histogram(t, 10, 2, 4000, seed=3) @ np.arange(11) / 4000 for t in (0.0, 0.3, 0.6, 0.9)]
    assert all(a < b for a, b in zip(means, means[1:]))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.integers(1, 40), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_mask_invariants(tau, T, sigma, seed):
    m = sample_mask(tau, T, sigma, np.random.default_rng(seed))
    assert m.bits.shape == (T,)
    assert set(np.unique(m.bits)) <= {0, 1}
    assert min(sigma, T) <= m.kept <= T
    assert m.kept >= 1
    if tau == 1.0:
        assert m.kept == T


def test_batch_matches_pairwise_draws():
    taus = np.array([0.0, 1.0, 0.4])
    u, v = sample_batch(taus, 6, 2, np.random.default_rng(9))
    rng = np.random.default_rng(9)
    for i, tau in enumerate(taus):
        a, b = sample_pair(np.zeros((6, 1)), tau, 2, rng)
        np.testing.assert_array_equal(u[i], a.bits)
        np.testing.assert_array_equal(v[i], b.bits)


def test_preconditions():
    with pytest.raises(ValueError):
        kept_bounds(0.5, 0, 3)
    with pytest.raises(ValueError):
        kept_bounds(0.5, 4, 0)
    with pytest.raises(ValueError):
        kept_bounds(1.5, 4, 1)


def test_csv_rows():
    rows = masks_to_csv_rows(["a", "b"], np.array([[1, 0, 1], [1, 1, 1]]))
    assert rows == ["a,101", "b,111"]
    assert FrameMask.full(3).kept == 3
