import csv
import json
import os
from contextlib import contextmanager
from pathlib import Path

import pytest

from skylens.cli import main
from skylens.harness.runmanifest import RunManifest

SMOKE_CFG = """\
[experiment]
tau_max = 40
horizon = 20
half_len = 24
stride = 5
train_fraction = 0.5

[occlusion]
rows = 8
horizon = 20
epochs = 3
members = 2

[ghi_experiment]
half_len = 8
stride = 5
pretrain_epochs = 2
finetune_epochs = 2
train_fraction = 0.5

[ghi]
history = 20
horizon = 20
image_rows = 17
"""

pytestmark = pytest.mark.filterwarnings("ignore:only .* train/test days:UserWarning")

PIPELINE = [
    "design-mirror --out prof/designed.csv",
    "render-dataset --days 2 --resolution 64 --max-frames 400 --out data",
    "preprocess --manifest data/day00_designed.csv",
    "slice --manifest data/day00_designed.csv --half-len 24 --tau-max 40 --horizon 20 --stride 50",
    "train --task occlusion --config smoke.cfg --data data --out model",
    "train --task ghi --config smoke.cfg --data data --mirror designed --out model",
    "evaluate --config smoke.cfg --data data --out eval",
    "forecast --model model --manifest data/day00_designed.csv --out fc",
]


@contextmanager
def inside(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield Path(path)
    finally:
        os.chdir(old)


def run_pipeline(root, seed=3):
    root.mkdir(parents=True, exist_ok=True)
    with inside(root):
        Path("smoke.cfg").write_text(SMOKE_CFG)
        for cmd in PIPELINE:
            assert main(cmd.split() + ["--seed", str(seed)]) == 0, cmd
    return root


def manifest_hashes(root):
    return {str(p.relative_to(root)): RunManifest.read(p).content_hash
            for p in sorted(root.rglob("run*.json")) if p.name != "designed.run.json"} | {
        "prof": RunManifest.read(root / "prof" / "designed.run.json").content_hash}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    return run_pipeline(base / "a"), run_pipeline(base / "b")


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestPipeline:
    def test_outputs(self, runs):
        a, _ = runs
        for rel in ("prof/designed.csv", "prof/designed.summary.json",
                    "data/day01_hemisphere.csv", "data/day00_designed.meta",
                    "data/day00_designed.slices", "model/split_occlusion.json",
                    "model/run_manifest_ghi.json", "eval/auc.svg", "eval/nrmse.svg",
                    "fc/forecast.csv"):
            assert (a / rel).exists(), rel

    def test_horizon_table(self, runs):
        a, _ = runs
        table = rows(a / "eval" / "horizon_table.csv")
        assert list(table[0]) == ["horizon_s", "method", "mirror", "metric", "value", "count"]
        methods = {(r["method"], r["metric"]) for r in table}
        assert methods == {("backprojection", "auc"), ("backprojection", "accuracy"),
                           ("cnn-mlp", "auc"), ("persistence", "nrmse"),
                           ("transformer", "nrmse")}
        assert {r["mirror"] for r in table} == {"designed", "hemisphere"}
        assert sorted({int(r["horizon_s"]) for r in table}) == list(range(30, 601, 30))

    def test_details(self, runs):
        a, _ = runs
        det = json.loads((a / "eval" / "details.json").read_text())
        assert set(det) == {"occlusion", "ghi"}
        for info in det["occlusion"]["mirrors"].values():
            assert {"confident_backprojection", "confident_cnn-mlp", "threshold"} <= set(info)

    def test_forecast_columns(self, runs):
        a, _ = runs
        fc = rows(a / "fc" / "forecast.csv")
        assert len(fc) == 20
        assert set(fc[0]) == {"horizon_s", "trace", "occluded_backprojection", "p_occluded",
                              "ghi_persistence", "ghi_transformer"}
        assert all(0.0 <= float(r["p_occluded"]) <= 1.0 for r in fc)

    def test_manifests_verify(self, runs):
        a, _ = runs
        with inside(a):
            for p in sorted(Path(".").rglob("run_manifest*.json")):
                assert RunManifest.read(p).verify() == [], p

    def test_same_seed_same_hashes(self, runs):
        a, b = runs
        ha, hb = manifest_hashes(a), manifest_hashes(b)
        assert len(ha) >= 7
        assert ha == hb


class TestErrors:
    def test_unknown_flag(self, capsys):
        assert main(["evaluate", "--out", "x", "--bogus"]) == 2
        assert "unrecognized arguments" in capsys.readouterr().err

    def test_missing_manifest_named(self, tmp_path, capsys):
        missing = tmp_path / "missing.csv"
        assert main(["evaluate", "--manifest", str(missing), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("skylens evaluate: error:") and str(missing) in err
        assert len(err.strip().splitlines()) == 1

    def test_unknown_config_section(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("[nonsense]\nx = 1\n")
        assert main(["evaluate", "--config", str(cfg), "--synthetic", "2",
                     "--out", str(tmp_path / "o")]) == 1
        assert "unknown config section [nonsense]" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("[occlusion]\nwidth_typo = 3\n")
        assert main(["train", "--task", "occlusion", "--config", str(cfg), "--synthetic", "2",
                     "--out", str(tmp_path / "o")]) == 1
        assert "width_typo" in capsys.readouterr().err

    def test_data_dir_from_environment(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SKYLENS_DATA_DIR", str(tmp_path / "envdata"))
        assert main(["evaluate", "--out", str(tmp_path / "o")]) == 1
        assert "envdata" in capsys.readouterr().err
