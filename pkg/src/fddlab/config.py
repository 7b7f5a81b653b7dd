"""Experiment configuration: a YAML file with explicit seeds.

One master ``seed`` drives every random stream of a run (channel locations,
training batches, random masks, permutations, Gumbel noise). Each stage
derives its own stream from it, so a run is fully described by its config.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .channel import ScenarioConfig
from .errors import ConfigError
from .masking import uniform_mask
from .nn.model import FULL_DILATIONS

GAPS_MHZ = (120, 240, 480)
DESK_CHANNELS = (8, 16, 32, 16, 8)


@dataclass
class MaskSettings:
    source: str = "uniform"  # uniform | random | cae | file
    eta: float = 0.0625
    antenna_step: int = 2
    path: str | None = None


@dataclass
class DataSettings:
    n_train: int = 10_000
    n_val: int = 1_000
    n_test: int = 1_000
    dir: str | None = None  # output of a previous `generate` run; generated in memory when unset


@dataclass
class ModelSettings:
    channels: tuple = DESK_CHANNELS
    dilations: tuple = FULL_DILATIONS
    checkpoint: str | None = None


@dataclass
class TrainSettings:
    batch_size: int = 32
    batches_per_epoch: int = 300
    max_epochs: int = 20
    patience: int = 10
    min_delta: float = 1e-5
    lr: float = 1e-3


@dataclass
class EvaluateSettings:
    gaps_mhz: tuple = GAPS_MHZ
    # reference interpolation from a carriers-only mask (every antenna on the selected carriers)
    baseline_all_antennas: bool = False


@dataclass
class RateSettings:
    users: tuple = (4, 8)
    snr_db: tuple = (0.0, 10.0, 20.0, 30.0)
    instances: int = 100
    gap_mhz: int = 120


@dataclass
class MmdSettings:
    n: int = 1000
    iterations: int = 100
    permutations: int = 500
    alpha: float = 0.05
    gaps_mhz: tuple = GAPS_MHZ
    include_other: bool = True
    # scenario fields changed for the comparison cell
    other: dict = field(default_factory=lambda: dict(OTHER_SCENARIO))


@dataclass
class MaskOptSettings:
    k: int | None = None  # defaults to the kept-entry count of the configured mask
    n_samples: int = 2000
    epochs: int = 200  # doubled on each retry
    batch_size: int = 32
    lr: float = 1e-2
    hidden: int | None = None
    t_start: float = 10.0
    t_end: float = 0.01
    init_scale: float = 0.01
    retries: int = 2


# A macro-like neighbouring cell: the mast sits above the rooftops, so paths
# arrive from a sector below the horizon, and delays spread out further.
OTHER_SCENARIO = {"tag": "other", "elevation_min_rad": -1.0, "elevation_max_rad": -0.2,
                  "delay_spread_s": 300e-9}

_SECTIONS = {
    "mask": MaskSettings, "data": DataSettings, "model": ModelSettings, "train": TrainSettings,
    "evaluate": EvaluateSettings, "rate": RateSettings, "mmd": MmdSettings, "maskopt": MaskOptSettings,
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    mask: MaskSettings = field(default_factory=MaskSettings)
    data: DataSettings = field(default_factory=DataSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    evaluate: EvaluateSettings = field(default_factory=EvaluateSettings)
    rate: RateSettings = field(default_factory=RateSettings)
    mmd: MmdSettings = field(default_factory=MmdSettings)
    maskopt: MaskOptSettings = field(default_factory=MaskOptSettings)

    def __post_init__(self):
        self.scenario = replace(self.scenario, seed=self.seed)
        self.validate()

    def validate(self) -> None:
        sc = self.scenario
        if self.mask.source not in ("uniform", "random", "cae", "file"):
            raise ConfigError(f"unknown mask source {self.mask.source!r}")
        if self.mask.source == "file":
            if not self.mask.path:
                raise ConfigError("mask source 'file' needs mask.path")
            if not Path(self.mask.path).exists():
                raise ConfigError(f"mask file {self.mask.path} does not exist")
        if not 0 < self.mask.eta <= 1:
            raise ConfigError("eta must lie in (0, 1]")
        if self.mask.source == "uniform":
            try:
                uniform_mask(sc.n_antennas, sc.n_carriers, self.mask.eta, self.mask.antenna_step)
            except ValueError as exc:
                raise ConfigError(f"eta {self.mask.eta} invalid for {sc.n_antennas}x{sc.n_carriers}: {exc}") from exc
        if self.model.checkpoint and not Path(self.model.checkpoint).exists():
            raise ConfigError(f"checkpoint {self.model.checkpoint} does not exist")
        if self.data.dir and not Path(self.data.dir).is_dir():
            raise ConfigError(f"data directory {self.data.dir} does not exist")
        if len(self.model.channels) != len(self.model.dilations):
            raise ConfigError("model.channels and model.dilations differ in length")
        for g in tuple(self.evaluate.gaps_mhz) + tuple(self.mmd.gaps_mhz) + (self.rate.gap_mhz,):
            if not g > 0:
                raise ConfigError("gaps must be positive")
        if min(self.data.n_train, self.data.n_val, self.data.n_test) < 1:
            raise ConfigError("data sizes must be positive")
        for k in self.rate.users:
            if int(k) < 1:
                raise ConfigError("user counts must be positive")
        if self.mmd.permutations < 100:
            raise ConfigError("mmd.permutations must be >= 100")
        if not 0 < self.mmd.alpha < 1:
            raise ConfigError("mmd.alpha must lie in (0, 1)")
        bad = set(self.mmd.other) - {f.name for f in fields(ScenarioConfig)}
        if bad:
            raise ConfigError(f"unknown scenario fields in mmd.other: {sorted(bad)}")

    def scenario_at_gap(self, gap_mhz: float) -> ScenarioConfig:
        return self.scenario.with_gap(gap_mhz * 1e6)

    def dl_center_hz(self, gap_mhz: float) -> float:
        return self.scenario.ul_center_hz + gap_mhz * 1e6

    def other_scenario(self) -> ScenarioConfig:
        return replace(self.scenario, **self.mmd.other)

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        sc = asdict(self.scenario)
        sc.pop("seed")
        out["scenario"] = sc
        for name in _SECTIONS:
            out[name] = _plain(asdict(getattr(self, name)))
        return out

    @classmethod
    def from_dict(cls, raw: dict | None) -> "ExperimentConfig":
        raw = dict(raw or {})
        unknown = set(raw) - {"seed", "scenario", *_SECTIONS}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {"seed": _int(raw.get("seed", 0), "seed")}
        sc = dict(raw.get("scenario") or {})
        if "seed" in sc:
            raise ConfigError("set the top-level seed, not scenario.seed")
        kwargs["scenario"] = _build(ScenarioConfig, sc, "scenario")
        for name, kind in _SECTIONS.items():
            kwargs[name] = _build(kind, raw.get(name) or {}, name)
        return cls(**kwargs)

    def with_overrides(self, seed=None, gap=None, eta=None, users=None) -> "ExperimentConfig":
        """Apply the command-line overrides and re-validate."""
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        if gap is not None:
            d["evaluate"]["gaps_mhz"] = [gap]
            d["mmd"]["gaps_mhz"] = [gap]
            d["rate"]["gap_mhz"] = gap
        if eta is not None:
            d["mask"]["eta"] = eta
        if users is not None:
            d["rate"]["users"] = [users]
        return ExperimentConfig.from_dict(d)


def _plain(d):
    if isinstance(d, dict):
        return {k: _plain(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_plain(v) for v in d]
    return d


def _int(v, name):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    return v


def _build(kind, values: dict, section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name: f for f in fields(kind)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    clean = {}
    for k, v in values.items():
        default = getattr(kind(), k) if kind is not ScenarioConfig else getattr(ScenarioConfig(), k)
        if isinstance(default, tuple):
            if not isinstance(v, (list, tuple)):
                raise ConfigError(f"{section}.{k} must be a list")
            v = tuple(v)
        elif isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        clean[k] = v
    try:
        return kind(**clean)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} settings: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    """Read a config file or a run manifest (whose ``config`` entry is used)."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if isinstance(raw, dict) and "config" in raw and "stage" in raw:
        raw = raw["config"]
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{p} must contain a mapping")
    return ExperimentConfig.from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
