"""Geometric multipath channel generator for paired UL/DL CSI.

Each location draws one set of propagation paths (delays, angles, powers).
The uplink and downlink matrices of a location share that geometry and differ
only in their per-path phases and in the center frequency. Element positions
are fixed in meters, so the array response drifts with frequency (beam squint).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

import numpy as np

from .errors import ConfigError, DegenerateSampleError

SPEED_OF_LIGHT = 299_792_458.0

Band = Literal["UL", "DL"]


@dataclass(frozen=True)
class ScenarioConfig:
    n_antennas_y: int = 4
    n_antennas_z: int = 4
    n_carriers: int = 32
    bandwidth_hz: float = 8e6
    ul_center_hz: float = 2.5e9
    dl_center_hz: float = 2.62e9
    n_paths: int = 8
    cell_radius_m: float = 150.0
    # None -> half wavelength at the UL center frequency
    element_spacing_m: float | None = None
    delay_spread_s: float = 150e-9
    power_decay: float = 1.0
    seed: int = 0
    tag: str = "umi"
    # "uniform": azimuth on (-pi, pi), elevation uniform on the sector below.
    # "cluster": paths spread around the user's line-of-sight direction.
    angle_model: str = "uniform"
    elevation_min_rad: float = -math.pi / 6
    elevation_max_rad: float = math.pi / 12
    azimuth_spread_rad: float = 0.35
    elevation_spread_rad: float = 0.1
    bs_height_m: float = 10.0
    min_distance_m: float = 10.0

    def __post_init__(self):
        if self.n_carriers < 2:
            raise ConfigError("n_carriers must be >= 2")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.n_antennas_y < 1 or self.n_antennas_z < 1:
            raise ConfigError("antenna grid must be non-empty")
        if not self.dl_center_hz > self.ul_center_hz:
            raise ConfigError("dl_center_hz must exceed ul_center_hz")
        if not self.bandwidth_hz < self.ul_center_hz:
            raise ConfigError("bandwidth_hz must be below ul_center_hz")
        if self.delay_spread_s <= 0:
            raise ConfigError("delay_spread_s must be positive")
        if self.angle_model not in ("uniform", "cluster"):
            raise ConfigError(f"unknown angle_model {self.angle_model!r}")
        if self.elevation_max_rad < self.elevation_min_rad:
            raise ConfigError("empty elevation sector")

    @property
    def n_antennas(self) -> int:
        return self.n_antennas_y * self.n_antennas_z

    @property
    def spacing_m(self) -> float:
        if self.element_spacing_m is not None:
            return self.element_spacing_m
        return SPEED_OF_LIGHT / self.ul_center_hz / 2.0

    @property
    def carrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.n_carriers

    def carrier_frequencies(self, center_hz: float) -> np.ndarray:
        n = np.arange(self.n_carriers)
        return center_hz + (n - (self.n_carriers - 1) / 2.0) * self.carrier_spacing_hz

    def with_gap(self, gap_hz: float) -> "ScenarioConfig":
        return replace(self, dl_center_hz=self.ul_center_hz + gap_hz)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PathSet:
    delays: np.ndarray
    azimuths: np.ndarray
    elevations: np.ndarray
    powers: np.ndarray
    ul_phases: np.ndarray
    dl_phases: np.ndarray

    def __post_init__(self):
        n = len(self.delays)
        for name in ("azimuths", "elevations", "powers", "ul_phases", "dl_phases"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length differs from delays")
        if np.any(self.delays < 0):
            raise ValueError("negative delay")
        if np.any(self.powers <= 0):
            raise ValueError("path powers must be positive")

    @property
    def n_paths(self) -> int:
        return len(self.delays)


@dataclass
class ChannelSample:
    matrix: np.ndarray  # (Na, Nc) complex
    path_gain_db: float = 0.0
    scenario_tag: str = ""
    location_id: int = -1
    paths: PathSet | None = field(default=None, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def element_positions(config: ScenarioConfig) -> np.ndarray:
    """UPA in the y-z plane, element k = iy * Nz + iz, shape (Na, 3)."""
    iy, iz = np.meshgrid(np.arange(config.n_antennas_y), np.arange(config.n_antennas_z), indexing="ij")
    d = config.spacing_m
    pos = np.zeros((config.n_antennas, 3))
    pos[:, 1] = iy.ravel() * d
    pos[:, 2] = iz.ravel() * d
    return pos


def direction(azimuth, elevation) -> np.ndarray:
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def steering_vector(config: ScenarioConfig, carrier_hz: float, azimuth: float, elevation: float) -> np.ndarray:
    if carrier_hz <= 0:
        raise ValueError("carrier_hz must be positive")
    proj = element_positions(config) @ direction(azimuth, elevation)
    return np.exp(-2j * np.pi * carrier_hz / SPEED_OF_LIGHT * proj)


def synthesize_channel(config: ScenarioConfig, paths: PathSet, band: Band = "UL", *,
                       center_hz: float | None = None) -> ChannelSample:
    """Sum-of-paths frequency response, column n = sum_l g_l(f_n) exp(-j 2 pi f_n tau_l)."""
    if band not in ("UL", "DL"):
        raise ValueError(f"band must be 'UL' or 'DL', got {band!r}")
    if center_hz is None:
        center_hz = config.ul_center_hz if band == "UL" else config.dl_center_hz
    phases = paths.ul_phases if band == "UL" else paths.dl_phases
    freqs = config.carrier_frequencies(center_hz)  # (Nc,)
    proj = element_positions(config) @ direction(paths.azimuths, paths.elevations).T  # (Na, L)
    # (Na, L, Nc) array response at every carrier
    spatial = np.exp(-2j * np.pi / SPEED_OF_LIGHT * proj[:, :, None] * freqs[None, None, :])
    gains = np.sqrt(paths.powers) * np.exp(1j * phases)  # (L,)
    delay_terms = np.exp(-2j * np.pi * np.outer(paths.delays, freqs))  # (L, Nc)
    h = np.einsum("l,alc,lc->ac", gains, spatial, delay_terms)
    return ChannelSample(matrix=h, scenario_tag=config.tag, paths=paths)


def normalize(sample: ChannelSample) -> ChannelSample:
    """Remove the path gain so the matrix has unit mean entry power.

    The path gain is measured from the matrix itself:
    ``PG_dB = 10 log10(mean |h|^2)``.
    """
    power = float(np.mean(np.abs(sample.matrix) ** 2))
    if not power > 0 or not np.isfinite(power):
        raise DegenerateSampleError("cannot normalize an all-zero channel matrix")
    pg_db = 10.0 * math.log10(power)
    scaled = sample.matrix * 10.0 ** (-pg_db / 20.0)
    return replace(sample, matrix=scaled, path_gain_db=pg_db)


def _rng(seed: int, index: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, *stream])


def draw_location(config: ScenarioConfig, rng: np.random.Generator) -> tuple[float, float]:
    """Uniform point in the cell annulus; returns (distance_m, azimuth_rad)."""
    r_min, r_max = config.min_distance_m, config.cell_radius_m
    dist = math.sqrt(rng.uniform(r_min ** 2, r_max ** 2))
    az = rng.uniform(-math.pi / 2, math.pi / 2)
    return dist, az


def draw_paths(config: ScenarioConfig, index: int, dl_center_hz: float | None = None) -> tuple[PathSet, float]:
    """Path geometry of location ``index`` plus its distance-based path loss in dB.

    Geometry and the UL phases depend only on (seed, index); the DL phases
    come from a substream keyed by the DL center frequency, so every DL band
    of a location sees the same delays and angles.
    """
    if dl_center_hz is None:
        dl_center_hz = config.dl_center_hz
    rng = _rng(config.seed, index, 0)
    L = config.n_paths
    dist, user_az = draw_location(config, rng)
    delays = np.sort(rng.exponential(config.delay_spread_s, size=L))
    delays -= delays[0]
    if config.angle_model == "uniform":
        az = rng.uniform(-math.pi, math.pi, size=L)
        el = rng.uniform(config.elevation_min_rad, config.elevation_max_rad, size=L)
    else:
        user_el = -math.atan2(config.bs_height_m, dist)
        az = user_az + rng.laplace(0.0, config.azimuth_spread_rad / math.sqrt(2), size=L)
        el = user_el + rng.laplace(0.0, config.elevation_spread_rad / math.sqrt(2), size=L)
    powers = np.exp(-config.power_decay * delays / config.delay_spread_s)
    powers = powers * rng.lognormal(0.0, 0.5, size=L)
    powers /= powers.sum()
    ul_phases = _rng(config.seed, index, 1).uniform(-math.pi, math.pi, size=L)
    dl_phases = _rng(config.seed, index, 2, int(round(dl_center_hz))).uniform(-math.pi, math.pi, size=L)
    # log-distance UMi-like path loss; only its removal by normalize() matters
    path_loss_db = 32.4 + 20 * math.log10(config.ul_center_hz / 1e9) + 31.9 * math.log10(dist)
    paths = PathSet(delays=delays, azimuths=az, elevations=el, powers=powers,
                    ul_phases=ul_phases, dl_phases=dl_phases)
    return paths, path_loss_db


def generate_pair(config: ScenarioConfig, index: int, dl_centers_hz=None) -> tuple[ChannelSample, list[ChannelSample]]:
    """Normalized UL sample and one normalized DL sample per requested DL center."""
    if dl_centers_hz is None:
        dl_centers_hz = [config.dl_center_hz]
    ul_paths, pl_db = draw_paths(config, index)
    amp = 10.0 ** (-pl_db / 20.0)
    ul = synthesize_channel(config, ul_paths, "UL")
    ul = normalize(replace(ul, matrix=ul.matrix * amp, location_id=index))
    dls = []
    for fc in dl_centers_hz:
        paths, _ = draw_paths(config, index, dl_center_hz=fc)
        dl = synthesize_channel(config, paths, "DL", center_hz=fc)
        dls.append(normalize(replace(dl, matrix=dl.matrix * amp, location_id=index)))
    return ul, dls


def split_sizes(n_samples: int, split=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    if n_samples < 3:
        raise ValueError("need at least 3 samples to split")
    if len(split) != 3 or any(f <= 0 for f in split) or not math.isclose(sum(split), 1.0, abs_tol=1e-9):
        raise ValueError("split fractions must be three positive numbers summing to 1")
    n_train = int(round(split[0] * n_samples))
    n_val = int(round(split[1] * n_samples))
    n_test = n_samples - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("split leaves an empty partition")
    return n_train, n_val, n_test


def generate_dataset(config: ScenarioConfig, n_samples: int, split=(0.8, 0.1, 0.1)):
    """Three lists (train, val, test) of (ul, dl) sample pairs.

    Samples are indexed 0..n-1 and each one is seeded from (seed, index), so
    any subset can be regenerated independently of the others.
    """
    sizes = split_sizes(n_samples, split)
    pairs = []
    for i in range(n_samples):
        ul, (dl,) = generate_pair(config, i)
        pairs.append((ul, dl))
    a, b = sizes[0], sizes[0] + sizes[1]
    return pairs[:a], pairs[a:b], pairs[b:]


@dataclass
class CsiSet:
    """Bulk container: ``matrices`` is (n, Na, Nc) complex, normalized."""

    matrices: np.ndarray
    path_gain_db: np.ndarray
    tag: str = ""
    band: str = "UL"

    def __len__(self) -> int:
        return self.matrices.shape[0]

    def __getitem__(self, idx) -> "CsiSet":
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return CsiSet(self.matrices[idx], self.path_gain_db[idx], self.tag, self.band)

    def sample(self, i: int) -> ChannelSample:
        return ChannelSample(self.matrices[i], float(self.path_gain_db[i]), self.tag, i)

    @classmethod
    def from_samples(cls, samples, tag: str = "", band: str = "UL") -> "CsiSet":
        mats = np.stack([s.matrix for s in samples]) if samples else np.zeros((0, 0, 0), complex)
        pgs = np.array([s.path_gain_db for s in samples], dtype=np.float64)
        return cls(mats, pgs, tag, band)


def generate_bands(config: ScenarioConfig, indices, dl_centers_hz) -> tuple[CsiSet, dict[float, CsiSet]]:
    """UL set and one DL set per DL center frequency for many locations."""
    indices = list(indices)
    na, nc = config.n_antennas, config.n_carriers
    n = len(indices)
    ul = CsiSet(np.empty((n, na, nc), np.complex128), np.empty(n), config.tag, "UL")
    dl = {fc: CsiSet(np.empty_like(ul.matrices), np.empty(n), config.tag, "DL") for fc in dl_centers_hz}
    for row, idx in enumerate(indices):
        u, ds = generate_pair(config, idx, dl_centers_hz)
        ul.matrices[row] = u.matrix
        ul.path_gain_db[row] = u.path_gain_db
        for fc, d in zip(dl_centers_hz, ds):
            dl[fc].matrices[row] = d.matrix
            dl[fc].path_gain_db[row] = d.path_gain_db
    return ul, dl
