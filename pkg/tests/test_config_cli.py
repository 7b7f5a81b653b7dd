import filecmp

import pytest
import yaml

from fddlab import cli, experiments
from fddlab.config import ExperimentConfig, load_config
from fddlab.errors import ConfigError, DivergenceError

TINY = {
    "seed": 3,
    "scenario": {"n_antennas_y": 2, "n_antennas_z": 2, "n_carriers": 8, "n_paths": 3},
    "mask": {"eta": 0.25},
    "data": {"n_train": 40, "n_val": 10, "n_test": 10},
    "model": {"channels": [4, 4], "dilations": [2, 1]},
    "train": {"batch_size": 8, "batches_per_epoch": 3, "max_epochs": 2},
    "evaluate": {"gaps_mhz": [120, 480]},
    "rate": {"users": [2], "snr_db": [10.0], "instances": 2},
    "mmd": {"n": 12, "iterations": 2, "permutations": 100},
    "maskopt": {"n_samples": 40, "epochs": 3, "batch_size": 16},
}


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return p


def _run(*args):
    return cli.main([str(a) for a in args])


def test_defaults_valid_and_round_trip():
    cfg = ExperimentConfig()
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert cfg.scenario.n_antennas == 16 and cfg.scenario.n_carriers == 32


def test_master_seed_drives_scenario():
    cfg = ExperimentConfig.from_dict({"seed": 11})
    assert cfg.scenario.seed == 11
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"scenario": {"seed": 1}})


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"train": {"lr_typo": 1}},
    {"mask": {"eta": 0.0}},
    {"mask": {"source": "file"}},
    {"seed": "x"},
    {"mmd": {"permutations": 10}},
    {"model": {"channels": [4], "dilations": [1, 2]}},
])
def test_invalid_configs_rejected(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_overrides():
    cfg = ExperimentConfig().with_overrides(seed=9, gap=240, eta=0.125, users=8)
    assert cfg.seed == 9 and cfg.scenario.seed == 9
    assert cfg.evaluate.gaps_mhz == (240,) and cfg.rate.gap_mhz == 240 and cfg.mmd.gaps_mhz == (240,)
    assert cfg.mask.eta == 0.125 and cfg.rate.users == (8,)


def test_exit_codes(tmp_path, tiny, monkeypatch):
    assert _run("train", "--out", tmp_path / "o", "--config", tmp_path / "missing.yaml") == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("mask: {eta: 2}\n")
    assert _run("train", "--out", tmp_path / "o", "--config", bad) == 2
    assert _run("nosuchstage", "--out", tmp_path / "o") == 2
    empty = tmp_path / "nodata"
    empty.mkdir()
    cfg = dict(TINY, data=dict(TINY["data"], dir=str(empty)))
    p = tmp_path / "d.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert _run("evaluate", "--out", tmp_path / "o", "--config", p) == 3

    def boom(*a, **k):
        raise DivergenceError("non-finite loss", epoch=1, batch=2)
    monkeypatch.setattr(experiments, "train", boom)
    assert _run("train", "--out", tmp_path / "o", "--config", tiny) == 4


def test_manifest_rerun_reproduces_csvs(tmp_path, tiny):
    first = tmp_path / "a"
    assert _run("generate", "--out", first / "generate", "--config", tiny) == 0
    cfg = dict(TINY, data=dict(TINY["data"], dir=str(first / "generate")))
    cfg_path = tmp_path / "with_data.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    assert _run("train", "--out", first / "train", "--config", cfg_path) == 0
    cfg["model"] = dict(TINY["model"], checkpoint=str(first / "train" / "model.fddnn"))
    cfg_path.write_text(yaml.safe_dump(cfg))
    stages = {"generate": "datasets.csv", "train": "loss_curve.csv", "evaluate": "metrics.csv",
              "rate": "rates.csv", "mmdtest": "mmd.csv", "maskopt": "mask_positions.csv"}
    for stage in ("evaluate", "rate", "mmdtest", "maskopt"):
        assert _run(stage, "--out", first / stage, "--config", cfg_path) == 0
    for stage, csv_name in stages.items():
        manifest = first / stage / "manifest.yaml"
        assert yaml.safe_load(manifest.read_text())["stage"] == stage
        again = tmp_path / "b" / stage
        assert _run(stage, "--out", again, "--config", manifest) == 0
        for f in (first / stage).glob("*.csv"):
            assert filecmp.cmp(f, again / f.name, shallow=False), f
        assert (again / csv_name).exists()
    assert load_config(first / "evaluate" / "manifest.yaml").seed == 3


def test_cli_seed_override_recorded(tmp_path, tiny):
    assert _run("generate", "--out", tmp_path / "g", "--config", tiny, "--seed", 8, "--gap", 240) == 0
    doc = yaml.safe_load((tmp_path / "g" / "manifest.yaml").read_text())
    assert doc["config"]["seed"] == 8 and doc["config"]["evaluate"]["gaps_mhz"] == [240]
    assert (tmp_path / "g" / "dl_test_240MHz.fddcsi").exists()
