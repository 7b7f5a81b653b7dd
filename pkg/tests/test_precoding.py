import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fddlab.precoding import (achieved_rates, evaluate_rate, exhaustive_best, lisa_select, water_level,
                              waterfill, zf_allocation)


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def test_waterfill_hand_cases():
    assert np.array_equal(waterfill([1.0, 0.25], 3.0), [3.0, 0.0])
    assert np.array_equal(waterfill([1.0, 1.0], 2.0), [1.0, 1.0])
    # water level 1.25, both channels active
    p = waterfill([1.0, 2.0], 1.0)
    assert np.allclose(p, [0.25, 0.75])


def test_waterfill_zero_gains_and_errors():
    assert np.array_equal(waterfill([0.0, 0.0], 1.0), [0.0, 0.0])
    assert np.array_equal(waterfill([0.0, 2.0], 1.0), [0.0, 1.0])
    with pytest.raises(ValueError):
        waterfill([1.0], 0.0)
    with pytest.raises(ValueError):
        waterfill([-1.0], 1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=12), st.floats(1e-2, 1e3))
def test_waterfill_kkt(gains, power):
    g = np.array(gains)
    p = waterfill(g, power)
    assert np.all(p >= 0)
    assert abs(p.sum() - power) <= 1e-12 * max(1.0, power)
    levels = water_level(g, p)
    mu = levels.mean()
    assert np.max(np.abs(levels - mu)) < 1e-9 * max(1.0, mu)
    # inactive channels sit above the water level
    assert np.all(1.0 / g[p == 0] >= mu - 1e-9 * max(1.0, mu))


def test_single_user_rate():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h = _crandn(rng, 1, 6)
        power = float(rng.uniform(0.1, 100))
        alloc = lisa_select(h, power)
        assert alloc.selected == [0]
        expected = np.log2(1 + power * np.linalg.norm(h) ** 2)
        assert alloc.sum_rate == pytest.approx(expected, abs=1e-9)
        assert achieved_rates(h, alloc)[0] == pytest.approx(expected, abs=1e-9)


def test_orthogonal_users_one_bit_each():
    h = np.eye(2, 4, dtype=complex)
    alloc = lisa_select(h, 2.0)
    assert sorted(alloc.selected) == [0, 1]
    assert np.allclose(achieved_rates(h, alloc), [1.0, 1.0])


def test_zf_nulls_interference():
    rng = np.random.default_rng(1)
    rows = _crandn(rng, 3, 5)
    alloc = zf_allocation(rows, 10.0)
    resp = rows @ alloc.precoders
    assert np.allclose(resp - np.diag(np.diagonal(resp)), 0, atol=1e-12)
    assert np.allclose(np.abs(np.diagonal(resp)) ** 2, alloc.gains)
    assert np.allclose(np.linalg.norm(alloc.precoders, axis=0), 1.0)


def test_greedy_matches_exhaustive_two_users():
    rng = np.random.default_rng(2)
    hits = 0
    for _ in range(100):
        h = _crandn(rng, 2, 4)
        best, _ = exhaustive_best(h, 10.0)
        hits += abs(lisa_select(h, 10.0).sum_rate - best) < 1e-9
    assert hits >= 95


def test_perfect_csi_rate_equals_allocation():
    rng = np.random.default_rng(3)
    h = _crandn(rng, 4, 8)
    alloc = lisa_select(h, 100.0)
    assert np.allclose(achieved_rates(h, alloc)[alloc.selected], alloc.rates)


def test_rate_monotone_in_power():
    rng = np.random.default_rng(4)
    h = _crandn(rng, 4, 8, 3)
    rates = [evaluate_rate(h, h, p).sum() for p in (1.0, 10.0, 100.0, 1000.0)]
    assert np.all(np.diff(rates) > 0)


def test_evaluate_rate_shapes():
    rng = np.random.default_rng(5)
    h = _crandn(rng, 3, 4, 2)
    with pytest.raises(ValueError):
        evaluate_rate(h, h[:, :, :1], 1.0)
    noisy = h + 0.5 * _crandn(rng, 3, 4, 2)
    assert evaluate_rate(h, noisy, 10.0).shape == (3,)
