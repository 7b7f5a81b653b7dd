"""Kernel two-sample testing of UL vs DL channel distributions.

Unbiased MMD^2 with a Gaussian kernel whose bandwidth is the median pairwise
distance of the pooled sample, and a permutation test that calibrates the
rejection threshold by re-splitting the pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DataError, DegenerateSampleError
from .numerics import complex_to_real, percentile


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise DegenerateSampleError("kernel bandwidth must be positive")


@dataclass
class MmdTestReport:
    statistic: float  # n * MMD^2 of the observed split
    null: np.ndarray  # n * MMD^2 under permutation
    threshold: float
    reject: bool
    alpha: float
    bandwidth: float
    n: int

    @property
    def mmd2(self) -> float:
        return self.statistic / self.n


@dataclass
class BatteryReport:
    iterations: list[MmdTestReport] = field(default_factory=list)

    @property
    def tpr(self) -> float:
        if not self.iterations:
            return 0.0
        return sum(r.reject for r in self.iterations) / len(self.iterations)

    @property
    def statistics(self) -> np.ndarray:
        return np.array([r.statistic for r in self.iterations])


def as_vectors(samples) -> np.ndarray:
    """Flatten channel matrices (n, Na, Nc) complex into (n, 2*Na*Nc) real rows."""
    arr = np.asarray(samples)
    if np.iscomplexobj(arr):
        arr = complex_to_real(arr)
    return arr.reshape(arr.shape[0], -1).astype(np.float64)


def _check_sets(p: np.ndarray, q: np.ndarray) -> None:
    if p.ndim != 2 or q.ndim != 2:
        raise ValueError("sample sets must be 2-D (n, d)")
    if p.shape[1] != q.shape[1]:
        raise ValueError("sample vectors differ in length")


def median_bandwidth(p, q) -> KernelConfig:
    p, q = as_vectors(p), as_vectors(q)
    _check_sets(p, q)
    pooled = np.vstack([p, q])
    if len(pooled) < 2:
        raise ValueError("need at least two points")
    sq = pairwise_sq_dists(pooled, pooled)
    iu = np.triu_indices(len(pooled), k=1)
    sigma = float(np.sqrt(np.median(sq[iu])))
    if sigma <= 0:
        raise DegenerateSampleError("median pairwise distance is zero")
    return KernelConfig(sigma)


def gaussian_kernel(p, q, cfg: KernelConfig) -> float:
    """``exp(-||p - q||^2 / sigma^2)`` for two vectors."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError("vectors differ in length")
    return float(np.exp(-np.sum((p - q) ** 2) / cfg.bandwidth ** 2))


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(sq, 0.0)


def kernel_matrix(a: np.ndarray, b: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    return np.exp(-pairwise_sq_dists(a, b) / cfg.bandwidth ** 2)


def _mmd2_from_blocks(kpp, kqq, kpq) -> float:
    n = kpp.shape[0]
    s = (kpp.sum() - np.trace(kpp)) + (kqq.sum() - np.trace(kqq)) - 2.0 * (kpq.sum() - np.trace(kpq))
    return float(s / (n * (n - 1)))


def mmd2_unbiased(p, q, cfg: KernelConfig) -> float:
    """``1/(n(n-1)) sum_{i != j} h_ij`` with
    ``h_ij = k(p_i,p_j) + k(q_i,q_j) - k(p_i,q_j) - k(q_i,p_j)``."""
    p, q = as_vectors(p), as_vectors(q)
    _check_sets(p, q)
    if p.shape[0] != q.shape[0]:
        raise ValueError("unbiased estimator needs equal sample sizes")
    if p.shape[0] < 2:
        raise ValueError("need n >= 2")
    return _mmd2_from_blocks(kernel_matrix(p, p, cfg), kernel_matrix(q, q, cfg), kernel_matrix(p, q, cfg))


def permutation_null(k: np.ndarray, n: int, n_permutations: int, seed) -> np.ndarray:
    """MMD^2 of ``n_permutations`` random equal splits of a pooled kernel matrix.

    Split j puts the first n entries of an independently seeded permutation in
    P and the rest in Q; P's i-th element is paired with Q's i-th for the
    cross-term diagonal.
    """
    m = 2 * n
    perms = np.stack([np.random.default_rng([*np.atleast_1d(seed), j]).permutation(m)
                      for j in range(n_permutations)])
    a, b = perms[:, :n], perms[:, n:]
    ua = np.zeros((m, n_permutations))
    ua[a.T, np.arange(n_permutations)] = 1.0
    ub = 1.0 - ua
    ku_a = k @ ua
    ku_b = k @ ub
    diag = np.diagonal(k)
    saa = np.einsum("ij,ij->j", ua, ku_a) - ua.T @ diag
    sbb = np.einsum("ij,ij->j", ub, ku_b) - ub.T @ diag
    sab = np.einsum("ij,ij->j", ua, ku_b)
    pair = k[a, b].sum(axis=1)
    return (saa + sbb - 2.0 * (sab - pair)) / (n * (n - 1))


def permutation_test(p, q, n_permutations: int = 500, alpha: float = 0.05, seed=0,
                     cfg: KernelConfig | None = None) -> MmdTestReport:
    """Reject equal distributions when n*MMD^2 exceeds the (1-alpha) null percentile.

    The bandwidth is computed once from the pooled sample; every permutation
    preserves the pool, so it is the same for every split.
    """
    if n_permutations < 100:
        raise ValueError("need at least 100 permutations")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p, q = as_vectors(p), as_vectors(q)
    _check_sets(p, q)
    n = p.shape[0]
    if q.shape[0] != n or n < 2:
        raise ValueError("need equal sample sizes n >= 2")
    cfg = cfg or median_bandwidth(p, q)
    pooled = np.vstack([p, q])
    k = kernel_matrix(pooled, pooled, cfg)
    observed = _mmd2_from_blocks(k[:n, :n], k[n:, n:], k[:n, n:])
    null = n * permutation_null(k, n, n_permutations, seed)
    threshold = percentile(null, 100.0 * (1.0 - alpha))
    stat = n * observed
    return MmdTestReport(stat, null, threshold, bool(stat > threshold), alpha, cfg.bandwidth, n)


Source = Callable[[int, int], np.ndarray]


def pool_source(pool, seed: int = 0, offset: int = 0) -> Source:
    """Source drawing ``n`` distinct rows of ``pool`` for iteration ``i``.

    Two sources built on the same pool with different ``offset`` draw from
    disjoint halves of a fixed shuffle, so their samples never share rows.
    """
    vecs = as_vectors(pool)

    def draw(i: int, n: int) -> np.ndarray:
        if n > len(vecs):
            raise DataError(f"pool of {len(vecs)} cannot supply {n} samples")
        rng = np.random.default_rng([seed, offset, i])
        return vecs[rng.choice(len(vecs), size=n, replace=False)]

    return draw


def disjoint_sources(pool, seed: int = 0) -> tuple[Source, Source]:
    """Two sources over disjoint random halves of one pool (null-hypothesis setup)."""
    vecs = as_vectors(pool)
    order = np.random.default_rng([seed, 7]).permutation(len(vecs))
    half = len(vecs) // 2
    return pool_source(vecs[order[:half]], seed, 1), pool_source(vecs[order[half:]], seed, 2)


def tpr_battery(source_p: Source, source_q: Source, n: int, n_iterations: int = 100,
                n_permutations: int = 500, alpha: float = 0.05, seed: int = 0) -> BatteryReport:
    """Repeat the permutation test on fresh sample pairs; TPR is the rejection fraction."""
    report = BatteryReport()
    for i in range(n_iterations):
        try:
            p = source_p(i, n)
            q = source_q(i, n)
        except (StopIteration, IndexError) as exc:
            raise DataError(f"sample source exhausted at iteration {i}") from exc
        report.iterations.append(permutation_test(p, q, n_permutations, alpha, seed=[seed, i]))
    return report
