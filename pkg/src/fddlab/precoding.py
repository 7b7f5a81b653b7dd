"""Linear successive allocation (greedy zero-forcing user selection) with water-filling.

Users have a single receive antenna; on each carrier user k receives
``y_k = h_k^H x + noise`` with unit noise power and a total transmit power P.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularMatrixError
from .numerics import lq_decompose

ORTH_TOL = 1e-9


@dataclass
class CarrierAllocation:
    selected: list[int] = field(default_factory=list)
    precoders: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), complex))  # (Na, s) unit-norm columns
    powers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gains: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rates: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def sum_rate(self) -> float:
        return float(self.rates.sum())


def waterfill(gains, total_power: float) -> np.ndarray:
    """Powers ``p_i = max(0, mu - 1/g_i)`` with ``sum p_i = total_power``.

    Channels with zero gain get zero power; if every gain is zero the result is all zeros.
    """
    if not total_power > 0:
        raise ValueError("total power must be positive")
    g = np.asarray(gains, dtype=np.float64)
    if np.any(g < 0):
        raise ValueError("gains must be nonnegative")
    p = np.zeros_like(g)
    active = np.flatnonzero(g > 0)
    if active.size == 0:
        return p
    inv = 1.0 / g[active]
    order = np.argsort(inv)
    inv_sorted = inv[order]
    # largest m whose water level stays above the m-th inverse gain
    csum = np.cumsum(inv_sorted)
    m_all = np.arange(1, len(inv_sorted) + 1)
    levels = (total_power + csum) / m_all
    m = int(np.max(np.flatnonzero(levels > inv_sorted))) + 1
    mu = levels[m - 1]
    alloc = np.maximum(mu - inv_sorted[:m], 0.0)
    # enforce the power budget to the last ulp on the active set
    alloc[0] += total_power - alloc.sum()
    pa = np.zeros_like(inv)
    pa[order[:m]] = alloc
    p[active] = pa
    return p


def water_level(gains, powers) -> np.ndarray:
    """``p_i + 1/g_i`` for channels with positive power (all equal at the optimum)."""
    g = np.asarray(gains, float)
    p = np.asarray(powers, float)
    on = p > 0
    return p[on] + 1.0 / g[on]


def zf_allocation(h_rows: np.ndarray, total_power: float) -> CarrierAllocation:
    """Zero-forcing precoding and water-filling for the given stacked rows ``h_k^H`` (s, Na)."""
    lower, q = lq_decompose(h_rows)
    # H = L Q, right inverse Q^H L^{-1}; column i has norm ||L^{-1} e_i||
    linv = np.linalg.solve(lower, np.eye(lower.shape[0]))
    w = q.conj().T @ linv
    norms = np.linalg.norm(linv, axis=0)
    w = w / norms
    gains = 1.0 / norms ** 2
    powers = waterfill(gains, total_power)
    rates = np.log2(1.0 + powers * gains)
    return CarrierAllocation([], w, powers, gains, rates)


def lisa_select(channels: np.ndarray, total_power: float) -> CarrierAllocation:
    """Greedy successive user selection for one carrier.

    ``channels`` is (K, Na): row k is user k's channel vector h_k. At each
    step the unselected user with the largest component orthogonal to the
    already-selected channels is added. Selection stops when that component
    vanishes (below ``ORTH_TOL``), when all users are selected, or when adding
    the user would not increase the water-filled zero-forcing sum rate.
    """
    h = np.asarray(channels, dtype=np.complex128)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("channels must be a non-empty (K, Na) array")
    k_users = h.shape[0]
    rows = h.conj()  # effective rows h_k^H
    resid = rows.copy()
    selected: list[int] = []
    best = CarrierAllocation()
    while len(selected) < k_users:
        norms = np.linalg.norm(resid, axis=1)
        norms[selected] = -1.0
        cand = int(np.argmax(norms))
        if norms[cand] < ORTH_TOL:
            break
        try:
            trial = zf_allocation(rows[selected + [cand]], total_power)
        except SingularMatrixError:
            break
        if selected and trial.sum_rate <= best.sum_rate:
            break
        trial.selected = selected + [cand]
        best = trial
        selected.append(cand)
        u = resid[cand] / norms[cand]
        resid = resid - np.outer(resid @ u.conj(), u)
    if not selected:
        na = h.shape[1]
        return CarrierAllocation([], np.zeros((na, 0), complex), np.zeros(0), np.zeros(0), np.zeros(0))
    return best


def achieved_rates(true_channels: np.ndarray, alloc: CarrierAllocation) -> np.ndarray:
    """Per-user rate on the true channels (K, Na), interference treated as noise."""
    k_users = true_channels.shape[0]
    rates = np.zeros(k_users)
    if not alloc.selected:
        return rates
    rows = np.asarray(true_channels).conj()[alloc.selected]  # (s, Na)
    resp = np.abs(rows @ alloc.precoders) ** 2 * alloc.powers[None, :]  # [k, j] = p_j |h_k^H w_j|^2
    signal = np.diagonal(resp)
    interference = resp.sum(axis=1) - signal
    rates[alloc.selected] = np.log2(1.0 + signal / (1.0 + interference))
    return rates


def evaluate_rate(true_channels: np.ndarray, csi: np.ndarray, total_power: float) -> np.ndarray:
    """Per-user rate averaged over carriers when precoding from ``csi``.

    Both arrays are (K, Na, Nc). Users not served on a carrier get rate 0 there.
    """
    h = np.asarray(true_channels)
    c = np.asarray(csi)
    if h.shape != c.shape:
        raise ValueError(f"user/antenna/carrier shapes differ: {h.shape} vs {c.shape}")
    if h.ndim != 3:
        raise ValueError("expected (K, Na, Nc) arrays")
    k_users, _, nc = h.shape
    total = np.zeros(k_users)
    for n in range(nc):
        alloc = lisa_select(c[:, :, n], total_power)
        total += achieved_rates(h[:, :, n], alloc)
    return total / nc


def exhaustive_best(channels: np.ndarray, total_power: float) -> tuple[float, tuple[int, ...]]:
    """Best water-filled zero-forcing sum rate over every non-empty user subset."""
    from itertools import combinations

    rows = np.asarray(channels, dtype=np.complex128).conj()
    best = (0.0, ())
    for size in range(1, rows.shape[0] + 1):
        for subset in combinations(range(rows.shape[0]), size):
            try:
                rate = zf_allocation(rows[list(subset)], total_power).sum_rate
            except ArithmeticError:
                continue
            if rate > best[0]:
                best = (rate, subset)
    return best
