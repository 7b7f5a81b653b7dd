import numpy as np
import pytest

from fddlab.errors import DataError, DegenerateSampleError
from fddlab.mmd import (KernelConfig, as_vectors, disjoint_sources, gaussian_kernel, kernel_matrix,
                        median_bandwidth, mmd2_unbiased, permutation_null, permutation_test, pool_source,
                        tpr_battery)


def _brute_mmd2(p, q, sigma):
    n = len(p)
    k = lambda a, b: np.exp(-np.sum((a - b) ** 2) / sigma ** 2)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += k(p[i], p[j]) + k(q[i], q[j]) - k(p[i], q[j]) - k(q[i], p[j])
    return total / (n * (n - 1))


def test_bandwidth_example():
    assert median_bandwidth([[0.0], [0.0]], [[1.0], [1.0]]).bandwidth == 1.0
    with pytest.raises(DegenerateSampleError):
        median_bandwidth([[1.0], [1.0]], [[1.0], [1.0]])
    with pytest.raises(DegenerateSampleError):
        KernelConfig(0.0)


def test_kernel_and_mmd_examples():
    cfg = KernelConfig(1.0)
    assert gaussian_kernel([0.0], [2.0], cfg) == pytest.approx(np.exp(-4))
    assert mmd2_unbiased([[0.0], [0.0]], [[1.0], [1.0]], cfg) == pytest.approx(2 - 2 * np.exp(-1))


def test_mmd_matches_double_sum():
    rng = np.random.default_rng(0)
    p, q = rng.standard_normal((7, 3)), rng.standard_normal((7, 3)) + 0.5
    cfg = median_bandwidth(p, q)
    assert mmd2_unbiased(p, q, cfg) == pytest.approx(_brute_mmd2(p, q, cfg.bandwidth), rel=1e-12)
    assert mmd2_unbiased(p, q, cfg) == pytest.approx(mmd2_unbiased(q, p, cfg), rel=1e-12)
    assert mmd2_unbiased(p, p, cfg) == pytest.approx(0.0, abs=1e-15)


def test_complex_matrices_flattened():
    rng = np.random.default_rng(1)
    m = rng.standard_normal((5, 2, 3)) + 1j * rng.standard_normal((5, 2, 3))
    v = as_vectors(m)
    assert v.shape == (5, 12)
    assert np.isclose((v ** 2).sum(), (np.abs(m) ** 2).sum())


def test_permutation_null_matches_explicit_splits():
    rng = np.random.default_rng(2)
    pooled = rng.standard_normal((12, 2))
    cfg = KernelConfig(1.3)
    k = kernel_matrix(pooled, pooled, cfg)
    null = permutation_null(k, 6, 5, seed=9)
    for j in range(5):
        perm = np.random.default_rng([9, j]).permutation(12)
        expected = mmd2_unbiased(pooled[perm[:6]], pooled[perm[6:]], cfg)
        assert null[j] == pytest.approx(expected, rel=1e-10, abs=1e-14)


def test_permutation_test_separates_and_is_deterministic():
    rng = np.random.default_rng(3)
    p = rng.standard_normal((60, 4))
    q = rng.standard_normal((60, 4)) + 1.0
    rep = permutation_test(p, q, 200, seed=1)
    assert rep.reject and rep.statistic > rep.threshold
    again = permutation_test(p, q, 200, seed=1)
    assert again.threshold == rep.threshold and again.statistic == rep.statistic
    with pytest.raises(ValueError):
        permutation_test(p, q, 50)
    with pytest.raises(ValueError):
        permutation_test(p, q[:10], 200)


def test_null_rejection_rate_small():
    rng = np.random.default_rng(4)
    pool = rng.standard_normal((4000, 3))
    sp, sq = disjoint_sources(pool, seed=0)
    rep = tpr_battery(sp, sq, n=40, n_iterations=60, n_permutations=200, seed=0)
    assert rep.tpr <= 0.15


def test_sources_disjoint_and_exhaustion():
    pool = np.arange(20, dtype=float)[:, None]
    sp, sq = disjoint_sources(pool, seed=0)
    assert not set(sp(0, 10).ravel()) & set(sq(0, 10).ravel())
    with pytest.raises(DataError):
        pool_source(pool)(0, 21)

    def short(i, n):
        raise IndexError
    with pytest.raises(DataError):
        tpr_battery(short, short, n=5, n_iterations=1, n_permutations=100)
