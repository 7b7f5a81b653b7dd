"""Shared numerical helpers: complex LQ factorisation and box-plot statistics.

Tensors throughout the package are plain numpy arrays. Real channel tensors
are ``(Na, Nc, 2)`` with the real part in plane 0 and the imaginary part in
plane 1; complex matrices are ``(Na, Nc)`` complex arrays.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import SingularMatrixError

RANK_TOL = 1e-10


class BoxStats(NamedTuple):
    q1: float
    median: float
    q3: float
    whisker_lo: float
    whisker_hi: float

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def lq_decompose(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor ``m = L @ Q`` with L lower triangular and orthonormal rows in Q.

    The diagonal of L is real and nonnegative. Computed from the QR
    factorisation of ``m^H``.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("lq_decompose expects a 2-D matrix")
    rows, cols = m.shape
    if rows > cols:
        raise ValueError(f"need rows <= cols, got {rows}x{cols}")
    q, r = np.linalg.qr(m.conj().T, mode="reduced")
    diag = np.diagonal(r)
    mag = np.abs(diag)
    phase = np.where(mag > 0, diag / np.where(mag > 0, mag, 1.0), 1.0)
    # R' = D^H R, Q' = Q D keeps Q' R' = Q R with a real nonnegative diagonal
    r = phase.conj()[:, None] * r
    q = q * phase[None, :]
    if mag.size and mag.min() < RANK_TOL * mag.max():
        raise SingularMatrixError("matrix is rank deficient")
    if mag.size and mag.max() == 0:
        raise SingularMatrixError("matrix is zero")
    lower = r.conj().T
    np.fill_diagonal(lower, np.real(np.diagonal(lower)))
    return lower, q.conj().T


def percentile(values, q: float) -> float:
    """Percentile with linear interpolation between closest ranks."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("percentile of empty sequence")
    return float(np.percentile(arr, q, method="linear"))


def quartiles(values) -> BoxStats:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("quartiles of empty sequence")
    q1, med, q3 = np.percentile(arr, [25.0, 50.0, 75.0], method="linear")
    iqr = q3 - q1
    return BoxStats(float(q1), float(med), float(q3), float(q1 - 1.5 * iqr), float(q3 + 1.5 * iqr))


def complex_to_real(h: np.ndarray) -> np.ndarray:
    """Stack real and imaginary parts along a new trailing axis."""
    return np.stack([h.real, h.imag], axis=-1)


def real_to_complex(x: np.ndarray) -> np.ndarray:
    return x[..., 0] + 1j * x[..., 1]
