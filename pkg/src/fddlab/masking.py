"""Binary feedback masks and the gather/scatter between channel tensors and feedback.

Feedback vectors list the kept entries carrier-major: for each selected
carrier in ascending order, each kept antenna in ascending order, real part
then imaginary part. UL training inputs and DL feedback use the same order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

FEEDBACK_ORDER_VERSION = 1


@dataclass(frozen=True, eq=False)
class Mask:
    pattern: np.ndarray  # (Na, Nc) bool
    eta: float

    def __post_init__(self):
        pat = np.asarray(self.pattern, dtype=bool)
        if pat.ndim != 2:
            raise ValueError("mask pattern must be 2-D")
        if not pat.any():
            raise ValueError("mask keeps no entries")
        pat.setflags(write=False)
        object.__setattr__(self, "pattern", pat)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pattern.shape

    @property
    def n_kept(self) -> int:
        return int(self.pattern.sum())

    @property
    def feedback_length(self) -> int:
        return 2 * self.n_kept

    @property
    def compression_ratio(self) -> float:
        return 1.0 / self.eta

    @property
    def mask_id(self) -> str:
        h = hashlib.sha1(np.packbits(self.pattern).tobytes())
        h.update(repr(self.pattern.shape).encode())
        return h.hexdigest()[:12]

    def carrier_major_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """(antenna, carrier) index arrays of kept entries in feedback order."""
        carriers, antennas = np.nonzero(self.pattern.T)
        return antennas, carriers

    def selected_carriers(self) -> np.ndarray:
        return np.flatnonzero(self.pattern.any(axis=0))

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pattern, other.pattern))

    def __hash__(self):
        return hash(self.mask_id)


@dataclass(frozen=True)
class FeedbackVector:
    values: np.ndarray
    mask_id: str


def uniform_mask(na: int, nc: int, eta: float, antenna_step: int = 2) -> Mask:
    """Equidistant carriers starting at 0; on each, every ``antenna_step``-th antenna.

    With the default step of 2 the carrier count is ``2*eta*nc``, so the mask
    keeps ``eta*na*nc`` complex entries. ``antenna_step=1`` gives the
    carriers-only variant (all antennas on ``eta*nc`` carriers).
    """
    if antenna_step < 1 or na % antenna_step:
        raise ValueError(f"na={na} not divisible by antenna_step={antenna_step}")
    n_sel = antenna_step * eta * nc
    n_car = int(round(n_sel))
    if n_car < 1 or abs(n_sel - n_car) > 1e-9 or nc % n_car:
        raise ValueError(f"{antenna_step}*eta*nc = {n_sel} must be a positive integer dividing nc={nc}")
    stride = nc // n_car
    pattern = np.zeros((na, nc), dtype=bool)
    pattern[::antenna_step, ::stride] = True
    return Mask(pattern, eta)


def full_mask(na: int, nc: int) -> Mask:
    return Mask(np.ones((na, nc), dtype=bool), 1.0)


def random_mask(na: int, nc: int, n_kept: int, seed: int = 0) -> Mask:
    if not 1 <= n_kept <= na * nc:
        raise ValueError("n_kept out of range")
    rng = np.random.default_rng(seed)
    flat = np.zeros(na * nc, dtype=bool)
    flat[rng.choice(na * nc, size=n_kept, replace=False)] = True
    return Mask(flat.reshape(na, nc), n_kept / (na * nc))


def mask_from_positions(na: int, nc: int, positions) -> Mask:
    """Mask keeping the given flat (antenna-major) positions."""
    flat = np.zeros(na * nc, dtype=bool)
    flat[np.asarray(positions, dtype=int)] = True
    return Mask(flat.reshape(na, nc), int(flat.sum()) / (na * nc))


def _check_shape(h: np.ndarray, mask: Mask) -> None:
    if h.shape[-3:] != (*mask.shape, 2):
        raise ValueError(f"tensor shape {h.shape} does not match mask {mask.shape}x2")


def apply_mask(h: np.ndarray, mask: Mask) -> FeedbackVector:
    """Gather the kept entries of a (Na, Nc, 2) tensor; batched input (B, Na, Nc, 2) gives (B, 2K)."""
    h = np.asarray(h)
    _check_shape(h, mask)
    a, c = mask.carrier_major_indices()
    values = h[..., a, c, :].reshape(*h.shape[:-3], -1)
    return FeedbackVector(values, mask.mask_id)


def scatter_to_sparse(fb: FeedbackVector | np.ndarray, mask: Mask, dtype=None) -> np.ndarray:
    values = fb.values if isinstance(fb, FeedbackVector) else np.asarray(fb)
    if values.shape[-1] != mask.feedback_length:
        raise ValueError(f"feedback length {values.shape[-1]} != {mask.feedback_length}")
    lead = values.shape[:-1]
    out = np.zeros((*lead, *mask.shape, 2), dtype=dtype or values.dtype)
    a, c = mask.carrier_major_indices()
    out[..., a, c, :] = values.reshape(*lead, -1, 2)
    return out


def mask_tensor(h: np.ndarray, mask: Mask) -> np.ndarray:
    """``h * M`` broadcast over the re/im plane (and any batch axes)."""
    _check_shape(h, mask)
    return np.where(mask.pattern[..., None], h, np.zeros((), dtype=h.dtype))
