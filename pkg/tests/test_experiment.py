import math
import warnings

import numpy as np
import pytest

from skylens.forecaster.ghi import GhiConfig
from skylens.forecaster.occlusion import OcclusionConfig
from skylens.harness import experiment as E
from skylens.harness.simdata import SimDay
from skylens.harness.sources import DiskSource, SyntheticSource, discover_manifests
from skylens.spacetime import SpaceTimeImage


class TestSplit:
    def test_partition(self):
        tr, te = E.split_days(range(28), 0.75, 3)
        assert len(tr) == 21 and len(te) == 7
        assert sorted(tr + te) == list(range(28))
        assert (tr, te) == E.split_days(range(28), 0.75, 3)
        assert tr != E.split_days(range(28), 0.75, 4)[0]

    def test_both_sides_nonempty(self):
        tr, te = E.split_days([5, 9], 0.99, 0)
        assert len(tr) == len(te) == 1

    def test_errors(self):
        with pytest.raises(ValueError):
            E.split_days([1], 0.5)
        with pytest.raises(ValueError):
            E.split_days([1, 2], 1.0)


def test_confident_horizon():
    assert E.confident_horizon([0.95, 0.92, 0.89, 0.97]) == 2
    assert E.confident_horizon([0.5, 0.99]) == 0
    assert E.confident_horizon([0.95, math.nan, 0.95]) == 1
    assert E.confident_horizon([0.91] * 5) == 5


def test_anchors_for():
    assert E.anchors_for(100, 20, 10, 25) == [20, 45, 70]
    assert E.anchors_for(25, 20, 10, 1) == []


def fake_day(n_frames=80, half_len=10, valid_cols=None):
    r = np.random.default_rng(0)
    data = r.random((2 * half_len + 1, n_frames, 3))
    valid = np.ones(data.shape[:2], bool)
    if valid_cols is not None:
        valid[:, ~valid_cols] = False
    st = SpaceTimeImage(data, valid, half_len, 1, 0.0, 30.0, np.arange(n_frames) * 30.0)
    ghi = 500.0 + np.arange(n_frames, dtype=float)
    return SimDay(0, "designed", st, np.zeros(n_frames, bool), ghi)


class TestGhiSamples:
    cfg = GhiConfig(history=16, horizon=4, image_rows=17, conv=(2, 2, 2, 2, 2), patch=4)

    def test_shapes_and_alignment(self):
        img, hist, targ, anchors = E.ghi_samples(fake_day(), self.cfg, stride=7, g0=1000.0)
        assert img.shape == (len(anchors), 3, 17, 16)
        np.testing.assert_array_equal(anchors, np.arange(15, 76, 7))
        T = anchors[1]
        np.testing.assert_allclose(hist[1], (500.0 + np.arange(T - 15, T + 1)) / 1000)
        np.testing.assert_allclose(targ[1], (500.0 + np.arange(T + 1, T + 5)) / 1000)

    def test_invalid_windows_skipped(self):
        cols = np.ones(80, bool)
        cols[30] = False
        _, _, _, anchors = E.ghi_samples(fake_day(valid_cols=cols), self.cfg, stride=1)
        assert not np.any((anchors >= 30) & (anchors <= 45))

    def test_rows_must_match(self):
        with pytest.raises(ValueError):
            E.ghi_samples(fake_day(), self.cfg, half_len=5)

    def test_empty(self):
        img, hist, _, _ = E.ghi_samples(fake_day(n_frames=18), self.cfg)
        assert img.shape == (0, 3, 17, 16) and len(hist) == 0


def test_digest_tracks_config():
    a = E.SimExperimentConfig()
    assert a.digest() == E.SimExperimentConfig().digest()
    assert a.digest() != E.SimExperimentConfig(stride=11).digest()


TINY_SIM = E.SimExperimentConfig(
    seed=5, n_days=4, resolution=64, train_fraction=0.5, stride=100, tau_max=40, horizon=10,
    half_len=24, occlusion=OcclusionConfig(rows=8, horizon=10, epochs=2, members=1))


@pytest.fixture(scope="module")
def sim_run():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return E.run_sim_experiment(TINY_SIM)


class TestSimExperiment:
    def test_table_rows(self, sim_run):
        table, _ = sim_run
        keys = {(r[1], r[2], r[3]) for r in table.rows}
        assert keys == {(m, k, met) for k in ("designed", "hemisphere")
                        for m, met in (("backprojection", "auc"),
                                       ("backprojection", "accuracy"),
                                       ("cnn-mlp", "auc"))}
        h, _ = table.series("cnn-mlp", "designed", "auc")
        np.testing.assert_array_equal(h, np.arange(1, 11) * 30)

    def test_details(self, sim_run):
        _, det = sim_run
        assert sorted(det["train_days"] + det["test_days"]) == [0, 1, 2, 3]
        assert det["config_digest"] == TINY_SIM.digest()
        for info in det["mirrors"].values():
            assert info["n_train"] > 0 and info["n_test"] > 0
            assert 0 <= info["confident_backprojection"] <= 10

    def test_warns_on_few_days(self):
        cfg = E.SimExperimentConfig(n_days=2, mirrors=("designed",), methods=("backprojection",),
                                    resolution=64, stride=400, tau_max=40, horizon=10,
                                    half_len=24, train_fraction=0.5)
        with pytest.warns(UserWarning, match="train/test days"):
            table, _ = E.run_sim_experiment(cfg)
        assert {r[1] for r in table.rows} == {"backprojection"}


class TestSources:
    def test_synthetic_days(self):
        assert SyntheticSource(1, 3, resolution=64).days == [0, 1, 2]

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="data directory not found"):
            discover_manifests(tmp_path / "nope")

    def test_empty_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="no dayNN"):
            DiskSource(tmp_path)

    def test_from_paths_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest not found"):
            DiskSource.from_paths([tmp_path / "day00_designed.csv"])
        bad = tmp_path / "frames.csv"
        bad.write_text("x")
        with pytest.raises(ValueError, match="dayNN"):
            DiskSource.from_paths([bad])

    def test_missing_mirror(self, tmp_path):
        p = tmp_path / "day03_designed.csv"
        p.write_text("x")
        src = DiskSource(tmp_path)
        assert src.days == [3]
        with pytest.raises(FileNotFoundError, match="day03_hemisphere.csv"):
            src.load(3, "hemisphere")
