import csv

import numpy as np
import pytest

from boneseg.cli import main
from boneseg.config import DEFAULTS, RunConfig
from boneseg.errors import ConfigError
from boneseg.io import load_volume, store_volume
from boneseg.volume import ScalarVolume, VolumeGeometry

TINY = ["--set", "net.base_channels=2", "--set", "train.epochs=1"]


def test_config_defaults_and_round_trip(tmp_path):
    cfg = RunConfig()
    assert cfg["train.lr0"] == 0.001 and cfg["train.lr_decay"] == 0.95 and cfg["train.decay_every"] == 10
    assert cfg["preprocess.dims"] == (144, 144, 80) and cfg["preprocess.spacing"] == (1.0, 1.0, 1.0)
    assert cfg["crossval.k"] == 5 and cfg["selftrain.rounds"] == 2
    path = cfg.updated(**{"train.epochs": "7", "train.flip_axes": "true true false"}).write(tmp_path / "c.txt")
    back = RunConfig.load(path)
    assert back["train.epochs"] == 7 and back["train.flip_axes"] == (True, True, False)
    assert back.to_text() == path.read_text()
    assert set(back) == set(DEFAULTS)


def test_config_rejects_bad_input():
    with pytest.raises(ConfigError):
        RunConfig.from_text("nope = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("train.epochs = many\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("train.epochs\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("preprocess.dims = 1 2\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("crossval.reference = noisy\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("train.epochs = 0\n").train_config()
    cfg = RunConfig.from_text("# comment\n\ntrain.epochs = 3\n")
    assert cfg.train_config().epochs == 3


def test_typed_views():
    cfg = RunConfig().updated(**{"selftrain.round_epochs": 0, "seed": 9})
    assert cfg.round_plan().round_epochs is None
    assert cfg.train_config().seed == 9
    assert cfg.network_config().head_init_std == DEFAULTS["net.head_init_std"]
    assert cfg.corruption_spec().severity == 0.5


def test_usage_and_module_errors(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--set", "bogus=1"]) == 2
    assert "[config]" in capsys.readouterr().err
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o"),
                 "--config", str(tmp_path / "missing.txt")]) == 2
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad.vhdr"
    bad.write_text("dims = 1 1 1\n")
    (tmp_path / "in").mkdir()
    bad.rename(tmp_path / "in" / "bad.vhdr")
    assert main(["preprocess", "--input", str(tmp_path / "in"), "--out", str(tmp_path / "p")]) == 1
    assert "[io]" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert main(["phantom", "gen", "--out", str(out), "--n", "3", "--seed", "2"]) == 0
    return out


def test_phantom_gen_writes_manifest(bench):
    rows = list(csv.DictReader((bench / "manifest.csv").open()))
    assert [r["case_id"] for r in rows] == ["case000", "case001", "case002"]
    assert (bench / "config.resolved.txt").read_text().startswith("augment.control_spacing_mm = ")


def test_train_equals_selftrain_with_zero_rounds(bench, tmp_path):
    assert main(["train", "--data", str(bench), "--out", str(tmp_path / "t"), *TINY]) == 0
    assert main(["selftrain", "--data", str(bench), "--out", str(tmp_path / "s"), *TINY,
                 "--set", "selftrain.rounds=0"]) == 0
    for name in ("model_r0.npz", "trainlog_r0.csv", "manifest_r0.csv"):
        assert (tmp_path / "t" / name).read_bytes() == (tmp_path / "s" / name).read_bytes()


def test_evaluate_identical_dirs(bench, tmp_path):
    same = tmp_path / "same"
    for c in ("case000", "case001"):
        store_volume(load_volume(bench / f"{c}_clean.vhdr"), same / c)
    assert main(["evaluate", "--pred", str(same), "--truth", str(same), "--out", str(tmp_path / "e")]) == 0
    rows = list(csv.DictReader((tmp_path / "e" / "metrics.csv").open()))
    assert len(rows) == 6
    assert all(float(r["dsc"]) == 1.0 and float(r["hd"]) == 0.0 for r in rows)
    assert [(r["case_id"], r["target"]) for r in rows[:3]] == [
        ("case000", "humerus"), ("case000", "scapula"), ("case000", "both")]


def test_predict_evaluate_against_manifest(bench, tmp_path):
    assert main(["train", "--data", str(bench), "--out", str(tmp_path / "t"), *TINY]) == 0
    assert main(["predict", "--model", str(tmp_path / "t" / "model_r0.npz"), "--data", str(bench),
                 "--out", str(tmp_path / "p")]) == 0
    assert len(list((tmp_path / "p").glob("*.vhdr"))) == 3
    assert main(["evaluate", "--pred", str(tmp_path / "p"), "--truth", str(bench), "--out", str(tmp_path / "e"),
                 "--reference", "gt"]) == 0


def test_preprocess_command(tmp_path):
    g = VolumeGeometry((40, 30, 12), (0.8, 1.2, 3.0))
    rng = np.random.default_rng(0)
    store_volume(ScalarVolume(g, rng.normal(50, 10, g.shape)), tmp_path / "in" / "scan")
    assert main(["preprocess", "--input", str(tmp_path / "in"), "--out", str(tmp_path / "out")]) == 0
    vol = load_volume(tmp_path / "out" / "scan.vhdr")
    assert vol.geometry.dims == (144, 144, 80) and vol.geometry.spacing == (1.0, 1.0, 1.0)
    assert vol.data.min() >= 0 and vol.data.max() <= 1


def test_crossval_and_report(bench, tmp_path):
    out = tmp_path / "cv"
    assert main(["crossval", "--data", str(bench), "--out", str(out), *TINY,
                 "--set", "crossval.k=3", "--set", "selftrain.rounds=1"]) == 0
    rows = list(csv.DictReader((out / "crossval.csv").open()))
    assert [r["group"] for r in rows] == ["G1", "G1", "G2", "G2", "G3", "G3", "mean", "mean"]
    assert (out / "config.resolved.txt").exists()
    assert main(["report", "--input", str(out), "--out", str(tmp_path / "rep")]) == 0
    produced = {p.name for p in (tmp_path / "rep").iterdir()}
    assert {"crossval.md", "crossval.png"} <= produced
    assert any(n.startswith("loss_") and n.endswith(".png") for n in produced)
