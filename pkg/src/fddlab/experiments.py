"""Stage runners behind the command line.

Every stage takes an :class:`ExperimentConfig` and an output directory, writes
its CSV reports plus ``manifest.yaml`` (the resolved config and stage name),
and returns a small summary dict. Running a stage again with
``--config <out>/manifest.yaml`` reproduces the CSV files byte for byte.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import io
from .channel import CsiSet, generate_bands
from .config import ExperimentConfig
from .errors import ConfigError, DataError
from .masking import Mask, random_mask, uniform_mask
from .maskopt import AnnealSchedule, train_cae
from .metrics import MetricsReport, linear_interp_recover
from .mmd import as_vectors, permutation_test
from .nn import ModelParams, init_model
from .precoding import evaluate_rate
from .training import TrainConfig, reconstruct, train

log = logging.getLogger(__name__)

# Location-index bases keep the sample streams of different stages disjoint.
MMD_UL_BASE = 1_000_000
MMD_DL_BASE = 2_000_000
MMD_OTHER_BASE = 3_000_000
RATE_BASE = 4_000_000
MASKOPT_BASE = 5_000_000

STAGES = ("generate", "train", "evaluate", "rate", "mmdtest", "maskopt")


def gap_label(gap_mhz) -> str:
    return f"{int(gap_mhz)}MHz"


def write_manifest(out: Path, stage: str, cfg: ExperimentConfig) -> Path:
    path = out / "manifest.yaml"
    doc = {"stage": stage, "version": __version__, "config": cfg.to_dict()}
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


# -- data -------------------------------------------------------------------

def split_indices(cfg: ExperimentConfig):
    d = cfg.data
    a = d.n_train
    b = a + d.n_val
    return range(0, a), range(a, b), range(b, b + d.n_test)


def _file_name(kind: str, gap_mhz=None) -> str:
    return f"dl_test_{gap_label(gap_mhz)}.fddcsi" if gap_mhz is not None else f"ul_{kind}.fddcsi"


@dataclass
class Datasets:
    ul_train: CsiSet
    ul_val: CsiSet
    ul_test: CsiSet
    dl_test: dict  # gap_mhz -> CsiSet


def build_datasets(cfg: ExperimentConfig, gaps=None, need_train: bool = True) -> Datasets:
    """UL train/val/test sets and DL test sets per gap, from files or generated."""
    gaps = list(cfg.evaluate.gaps_mhz if gaps is None else gaps)
    if cfg.data.dir:
        root = Path(cfg.data.dir)

        def load(name, band):
            p = root / name
            if not p.exists():
                raise DataError(f"dataset file {p} is missing")
            return io.read_dataset(p, band, cfg.scenario.tag)

        empty = CsiSet(np.zeros((0, cfg.scenario.n_antennas, cfg.scenario.n_carriers), complex), np.zeros(0),
                       cfg.scenario.tag, "UL")
        return Datasets(load(_file_name("train"), "UL") if need_train else empty,
                        load(_file_name("val"), "UL") if need_train else empty,
                        load(_file_name("test"), "UL"),
                        {g: load(_file_name("", g), "DL") for g in gaps})
    tr, va, te = split_indices(cfg)
    centers = [cfg.dl_center_hz(g) for g in gaps]
    if need_train:
        ul_train, _ = generate_bands(cfg.scenario, tr, [])
        ul_val, _ = generate_bands(cfg.scenario, va, [])
    else:
        ul_train = ul_val = generate_bands(cfg.scenario, [], [])[0]
    ul_test, dl = generate_bands(cfg.scenario, te, centers)
    return Datasets(ul_train, ul_val, ul_test, {g: dl[c] for g, c in zip(gaps, centers)})


# -- mask and model ---------------------------------------------------------

def kept_count(cfg: ExperimentConfig) -> int:
    sc = cfg.scenario
    return int(round(cfg.mask.eta * sc.n_antennas * sc.n_carriers))


def resolve_mask(cfg: ExperimentConfig, ul_train: CsiSet | None = None) -> Mask:
    sc = cfg.scenario
    na, nc = sc.n_antennas, sc.n_carriers
    src = cfg.mask.source
    if src == "uniform":
        return uniform_mask(na, nc, cfg.mask.eta, cfg.mask.antenna_step)
    if src == "random":
        return random_mask(na, nc, kept_count(cfg), seed=cfg.seed)
    if src == "file":
        mask = io.read_mask(cfg.mask.path)
        if mask.shape != (na, nc):
            raise ConfigError(f"mask file is {mask.shape}, scenario is {(na, nc)}")
        return mask
    return run_cae(cfg, ul_train).mask


def resolve_model(cfg: ExperimentConfig, mask: Mask) -> ModelParams:
    if cfg.model.checkpoint:
        model = io.load_checkpoint(cfg.model.checkpoint)
        stored = model.meta.get("mask")
        if stored is not None and stored != mask:
            raise ConfigError("configured mask differs from the checkpoint's mask")
        return model
    model = init_model(cfg.model.channels, cfg.model.dilations, seed=cfg.seed)
    model.meta["mask"] = mask
    return model


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(t.batch_size, t.batches_per_epoch, t.max_epochs, cfg.seed, t.patience, t.min_delta, t.lr)


def run_cae(cfg: ExperimentConfig, ul_train: CsiSet | None = None):
    mo = cfg.maskopt
    if ul_train is None or len(ul_train) == 0:
        ul_train, _ = generate_bands(cfg.scenario, range(MASKOPT_BASE, MASKOPT_BASE + mo.n_samples), [])
    data = ul_train.matrices[: mo.n_samples]
    k = mo.k or kept_count(cfg)
    schedule = AnnealSchedule(mo.t_start, mo.t_end, mo.epochs)
    return train_cae(data, k, hidden=mo.hidden, schedule=schedule, batch_size=mo.batch_size, lr=mo.lr,
                     seed=cfg.seed, init_scale=mo.init_scale, retries=mo.retries)


# -- stages -----------------------------------------------------------------

def run_generate(cfg: ExperimentConfig, out: Path) -> dict:
    ds = build_datasets(cfg)
    rows = []
    for kind, data in (("train", ds.ul_train), ("val", ds.ul_val), ("test", ds.ul_test)):
        name = _file_name(kind)
        io.write_dataset(out / name, data)
        rows.append((name, "UL", 0, len(data), float(np.mean(data.path_gain_db))))
    for g, data in ds.dl_test.items():
        name = _file_name("", g)
        io.write_dataset(out / name, data)
        rows.append((name, "DL", g, len(data), float(np.mean(data.path_gain_db))))
    io.write_csv(out / "datasets.csv", ("file", "band", "gap_mhz", "samples", "mean_path_gain_db"), rows)
    write_manifest(out, "generate", cfg)
    return {"files": [r[0] for r in rows]}


def run_train(cfg: ExperimentConfig, out: Path) -> dict:
    ds = build_datasets(cfg, gaps=[])
    mask = resolve_mask(cfg, ds.ul_train)
    model = resolve_model(cfg, mask)
    result = train(model, ds.ul_train, ds.ul_val, mask, train_config(cfg))
    io.write_csv(out / "loss_curve.csv", ("epoch", "train_loss", "val_loss"), result.curve_rows())
    io.save_checkpoint(out / "model.fddnn", result.model, mask)
    io.write_mask(out / "mask.fddmsk", mask)
    write_manifest(out, "train", cfg)
    return {"best_epoch": result.best_epoch, "best_val_loss": min(result.val_loss)}


def metrics_reports(model: ModelParams, mask: Mask, ds: Datasets, baseline_mask: Mask | None = None):
    """CNN and interpolation reports for the UL test set and each DL gap."""
    baseline_mask = baseline_mask or mask
    sets = [("UL", ds.ul_test)] + [(gap_label(g), s) for g, s in ds.dl_test.items()]
    reports = []
    for label, data in sets:
        true = data.matrices
        reports.append(MetricsReport.evaluate(true, reconstruct(model, true, mask), "cnn", label, data.tag))
        reports.append(MetricsReport.evaluate(true, linear_interp_recover(true, baseline_mask), "interp", label,
                                              data.tag))
    return reports


def _baseline_mask(cfg: ExperimentConfig, mask: Mask) -> Mask:
    if not cfg.evaluate.baseline_all_antennas:
        return mask
    pattern = np.zeros_like(mask.pattern)
    pattern[:, mask.selected_carriers()] = True
    return Mask(pattern, float(pattern.mean()))


def run_evaluate(cfg: ExperimentConfig, out: Path) -> dict:
    ds = build_datasets(cfg, need_train=cfg.mask.source == "cae")
    mask = resolve_mask(cfg, ds.ul_train)
    model = resolve_model(cfg, mask)
    reports = metrics_reports(model, mask, ds, _baseline_mask(cfg, mask))
    rows = []
    for r in reports:
        rows += [(i, e, c, r.method, r.gap_label) for i, (e, c) in enumerate(zip(r.nmse, r.cossim))]
    for r in reports:
        nb, cb = r.nmse_box, r.cossim_box
        for stat in ("q1", "median", "q3", "whisker_lo", "whisker_hi"):
            rows.append((stat, getattr(nb, stat), getattr(cb, stat), r.method, r.gap_label))
        rows.append(("mean", float(np.mean(r.nmse)), float(np.mean(r.cossim)), r.method, r.gap_label))
    io.write_csv(out / "metrics.csv", ("sample_id", "nmse", "cossim", "method", "gap_label"), rows)
    write_manifest(out, "evaluate", cfg)
    return {f"{r.method}_{r.gap_label}_median_nmse": r.nmse_box.median for r in reports}


def rate_instances(cfg: ExperimentConfig, users: int, gap_mhz: float, instances: int):
    """True DL channels (instances, K, Na, Nc) for fresh user drops."""
    start = RATE_BASE + 10_000 * users
    _, dl = generate_bands(cfg.scenario, range(start, start + users * instances), [cfg.dl_center_hz(gap_mhz)])
    mats = next(iter(dl.values())).matrices
    return mats.reshape(instances, users, *mats.shape[1:])


def rate_study(model: ModelParams, mask: Mask, channels: np.ndarray, snr_db, baseline_mask: Mask | None = None):
    """Per-instance mean per-user rates for perfect, CNN and interpolated CSI.

    Returns ``{snr_db: {source: array(instances)}}``.
    """
    baseline_mask = baseline_mask or mask
    n_inst, k = channels.shape[:2]
    flat = channels.reshape(n_inst * k, *channels.shape[2:])
    csi = {"perfect": flat, "cnn": reconstruct(model, flat, mask),
           "interp": linear_interp_recover(flat, baseline_mask)}
    csi = {name: c.reshape(channels.shape) for name, c in csi.items()}
    out = {}
    for snr in snr_db:
        power = 10.0 ** (snr / 10.0)
        out[snr] = {name: np.array([evaluate_rate(channels[i], c[i], power).mean() for i in range(n_inst)])
                    for name, c in csi.items()}
    return out


def run_rate(cfg: ExperimentConfig, out: Path) -> dict:
    mask = resolve_mask(cfg)
    model = resolve_model(cfg, mask)
    rows = []
    summary = {}
    for k in cfg.rate.users:
        channels = rate_instances(cfg, int(k), cfg.rate.gap_mhz, cfg.rate.instances)
        study = rate_study(model, mask, channels, cfg.rate.snr_db, _baseline_mask(cfg, mask))
        for snr, per_source in study.items():
            for name, vals in per_source.items():
                rows.append((snr, int(k), name, float(np.mean(vals))))
                summary[f"{name}_K{k}_{snr}dB"] = float(np.mean(vals))
    io.write_csv(out / "rates.csv", ("snr_db", "users", "csi_source", "per_user_rate"), rows)
    write_manifest(out, "rate", cfg)
    return summary


@lru_cache(maxsize=4)
def _channel_block(scenario, base: int, i: int, n: int, dl_centers: tuple):
    """UL matrices and DL matrices per center for locations ``base + i*n ...``.

    Cached so the UL block and every DL band of one iteration are synthesized once.
    """
    ul, dl = generate_bands(scenario, range(base + i * n, base + (i + 1) * n), list(dl_centers))
    return ul.matrices, {fc: s.matrices for fc, s in dl.items()}


class ChannelSource:
    """Fresh, disjoint blocks of normalized channel vectors for repeated MMD tests.

    DL sources of one cell that differ only in the DL center can share
    ``dl_centers`` so a single pass synthesizes all of their bands.
    """

    def __init__(self, scenario, band: str, base: int, dl_center_hz: float | None = None, limit: int | None = None,
                 dl_centers: tuple | None = None):
        self.scenario = scenario
        self.band = band
        self.base = base
        self.dl_center_hz = dl_center_hz
        self.limit = limit
        if band == "UL":
            self.dl_centers = ()
        else:
            self.dl_centers = tuple(dl_centers) if dl_centers else (dl_center_hz,)
            if dl_center_hz not in self.dl_centers:
                raise ValueError("dl_center_hz must be one of dl_centers")

    def matrices(self, i: int, n: int) -> np.ndarray:
        if self.limit is not None and (i + 1) * n > self.limit:
            raise DataError(f"source exhausted: iteration {i} needs {(i + 1) * n} samples, limit {self.limit}")
        ul, dl = _channel_block(self.scenario, self.base, i, n, self.dl_centers)
        return ul if self.band == "UL" else dl[self.dl_center_hz]

    def __call__(self, i: int, n: int) -> np.ndarray:
        return as_vectors(self.matrices(i, n))


def mmd_comparisons(cfg: ExperimentConfig):
    """``[(label, ul_source, other_source)]`` for each gap and the other cell."""
    ul = ChannelSource(cfg.scenario, "UL", MMD_UL_BASE)
    centers = tuple(cfg.dl_center_hz(g) for g in cfg.mmd.gaps_mhz)
    comps = [(gap_label(g), ul, ChannelSource(cfg.scenario, "DL", MMD_DL_BASE, fc, dl_centers=centers))
             for g, fc in zip(cfg.mmd.gaps_mhz, centers)]
    if cfg.mmd.include_other:
        first_gap = cfg.mmd.gaps_mhz[0] if cfg.mmd.gaps_mhz else 120
        comps.append(("other", ul, ChannelSource(cfg.other_scenario(), "DL", MMD_OTHER_BASE,
                                                 cfg.dl_center_hz(first_gap))))
    return comps


def run_mmdtest(cfg: ExperimentConfig, out: Path) -> dict:
    m = cfg.mmd
    rows = []
    summary = {}
    comps = mmd_comparisons(cfg)
    reports = [[] for _ in comps]
    # iteration-major so each iteration's channel blocks are synthesized once
    for i in range(m.iterations):
        for c, (_, src_p, src_q) in enumerate(comps):
            reports[c].append(permutation_test(src_p(i, m.n), src_q(i, m.n), m.permutations, m.alpha,
                                               seed=[cfg.seed, c, i]))
    for (label, _, _), reps in zip(comps, reports):
        for i, rep in enumerate(reps):
            rows.append((label, i, rep.statistic, rep.threshold, int(rep.reject), ""))
        stats = [r.statistic for r in reps]
        rejects = [r.reject for r in reps]
        tpr = float(np.mean(rejects))
        rows.append((label, "all", float(np.median(stats)), "", int(np.sum(rejects)), tpr))
        summary[label] = tpr
    io.write_csv(out / "mmd.csv", ("comparison", "iteration", "statistic", "threshold", "reject", "tpr"), rows)
    write_manifest(out, "mmdtest", cfg)
    return summary


def run_maskopt(cfg: ExperimentConfig, out: Path) -> dict:
    res = run_cae(cfg)
    io.write_csv(out / "cae_loss.csv", ("epoch", "loss", "sharpness", "temperature"), res.curve_rows())
    io.write_mask(out / "mask.fddmsk", res.mask)
    sel = np.flatnonzero(res.mask.pattern.ravel())
    io.write_csv(out / "mask_positions.csv", ("position", "antenna", "carrier"),
                 [(p, p // cfg.scenario.n_carriers, p % cfg.scenario.n_carriers) for p in sel])
    write_manifest(out, "maskopt", cfg)
    return {"final_loss": res.loss[-1] if res.loss else float("nan"), "k": int(res.mask.n_kept)}


RUNNERS = {"generate": run_generate, "train": run_train, "evaluate": run_evaluate, "rate": run_rate,
           "mmdtest": run_mmdtest, "maskopt": run_maskopt}


def run_stage(stage: str, cfg: ExperimentConfig, out) -> dict:
    if stage not in RUNNERS:
        raise ConfigError(f"unknown stage {stage!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[stage](cfg, out)
