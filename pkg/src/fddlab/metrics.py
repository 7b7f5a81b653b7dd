"""Linear-interpolation reference reconstruction and reconstruction-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSample
from .errors import DegenerateSampleError
from .masking import Mask
from .numerics import BoxStats, quartiles


def _matrix(x) -> np.ndarray:
    return x.matrix if isinstance(x, ChannelSample) else np.asarray(x)


def interpolate_matrix(h: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """Complete one complex (Na, Nc) matrix from its entries at ``pattern``.

    Rows with observations are interpolated linearly along the carrier axis
    (real and imaginary parts separately, held flat outside the observed
    span). Remaining rows are then interpolated along the antenna index from
    the observed rows, also held at the edges.
    """
    na, nc = pattern.shape
    carriers = np.arange(nc)
    out = np.zeros((na, nc), dtype=np.complex128)
    obs_rows = np.flatnonzero(pattern.any(axis=1))
    for a in obs_rows:
        cs = np.flatnonzero(pattern[a])
        vals = h[a, cs]
        out[a] = np.interp(carriers, cs, vals.real) + 1j * np.interp(carriers, cs, vals.imag)
    missing = np.setdiff1d(np.arange(na), obs_rows)
    if missing.size:
        for c in range(nc):
            col = out[obs_rows, c]
            out[missing, c] = (np.interp(missing, obs_rows, col.real)
                               + 1j * np.interp(missing, obs_rows, col.imag))
    return out


def linear_interp_recover(dl_true, mask: Mask):
    """Interpolation baseline; accepts a ChannelSample, a matrix, or a (B, Na, Nc) stack."""
    if len(mask.selected_carriers()) < 2:
        raise ValueError("linear interpolation needs at least 2 observed carriers")
    h = _matrix(dl_true)
    if h.ndim == 3:
        return np.stack([interpolate_matrix(m, mask.pattern) for m in h])
    rec = interpolate_matrix(h, mask.pattern)
    if isinstance(dl_true, ChannelSample):
        return ChannelSample(rec, dl_true.path_gain_db, dl_true.scenario_tag, dl_true.location_id)
    return rec


def nmse(true, est) -> np.ndarray | float:
    """``||est - true||_F^2 / ||true||_F^2`` per sample (last two axes are the matrix)."""
    h = _matrix(true)
    e = _matrix(est)
    if h.shape != e.shape:
        raise ValueError(f"shape mismatch {h.shape} vs {e.shape}")
    denom = np.sum(np.abs(h) ** 2, axis=(-2, -1))
    if np.any(denom == 0):
        raise DegenerateSampleError("NMSE undefined for an all-zero true matrix")
    val = np.sum(np.abs(e - h) ** 2, axis=(-2, -1)) / denom
    return float(val) if np.ndim(val) == 0 else val


def cosine_similarity(true, est) -> np.ndarray | float:
    """Mean over carriers of ``|est_n^H h_n| / (||est_n|| ||h_n||)`` per sample."""
    h = _matrix(true)
    e = _matrix(est)
    if h.shape != e.shape:
        raise ValueError(f"shape mismatch {h.shape} vs {e.shape}")
    nh = np.linalg.norm(h, axis=-2)
    ne = np.linalg.norm(e, axis=-2)
    if np.any(nh == 0) or np.any(ne == 0):
        raise DegenerateSampleError("cosine similarity undefined for a zero column")
    inner = np.abs(np.sum(e.conj() * h, axis=-2))
    val = np.mean(np.minimum(inner / (nh * ne), 1.0), axis=-1)
    return float(val) if np.ndim(val) == 0 else val


@dataclass
class MetricsReport:
    method: str
    gap_label: str
    nmse: np.ndarray
    cossim: np.ndarray
    scenario: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def nmse_box(self) -> BoxStats:
        return quartiles(self.nmse)

    @property
    def cossim_box(self) -> BoxStats:
        return quartiles(self.cossim)

    @classmethod
    def evaluate(cls, true: np.ndarray, est: np.ndarray, method: str, gap_label: str, scenario: str = ""):
        return cls(method, gap_label, np.atleast_1d(nmse(true, est)), np.atleast_1d(cosine_similarity(true, est)),
                   scenario)
