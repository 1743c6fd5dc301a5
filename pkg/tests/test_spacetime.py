import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skylens import spacetime as stm
from skylens.skysim.clouds import CloudField


def streaks(theta, seed, L=128, F=300):
    """Synthetic space-time image whose structures move at tan(theta) rows per frame."""
    v = math.tan(math.radians(theta))
    y = np.arange(-L, L + 1)[:, None]
    f = np.arange(F)[None, :]
    g = CloudField(seed=seed, base_scale=30.0).density(y + v * f, np.zeros((2 * L + 1, F)))
    data = np.stack([0.5 + 0.5 * g, 0.5 + 0.5 * g, 1.0 - 0.3 * g], axis=-1)
    return stm.SpaceTimeImage(data, np.ones(data.shape[:2], bool), L, 1, 0.0, 30.0,
                              np.arange(F) * 30.0)


class TestRatio:
    def test_values(self):
        assert stm.red_blue_ratio([0.2, 0.5, 0.6]) == pytest.approx(0.5)
        assert stm.red_blue_ratio([0.0, 1.0, 0.0]) == 0.0

    @given(st.floats(0, 1e3), st.floats(0, 1e3))
    def test_bounded(self, r, b):
        assert -1.0 <= stm.red_blue_ratio([r, 0.0, b]) <= 1.0


class TestSlice:
    def test_positions_centred(self):
        x, y = stm.slice_positions((10.0, 20.0), 90.0, 3, band=3)
        assert x.shape == (7, 3)
        assert (x[3, 1], y[3, 1]) == pytest.approx((10.0, 20.0))
        np.testing.assert_allclose(np.diff(y[:, 1]), 1.0)

    @given(theta=st.floats(0, 360), sx=st.floats(20, 44), sy=st.floats(20, 44))
    def test_bilinear_exact_on_ramp(self, theta, sx, sy):
        rr, cc = np.mgrid[0:64, 0:64].astype(float)
        img = 2.0 * (cc + 0.5) - 3.0 * (rr + 0.5)
        vals, ok = stm.extract_slice(img, (sx, sy), theta, 10)
        x, y = stm.slice_positions((sx, sy), theta, 10)
        assert ok.all()
        np.testing.assert_allclose(vals[:, 0], 2.0 * x[:, 0] - 3.0 * y[:, 0], atol=1e-9)

    def test_outside_is_invalid(self):
        vals, ok = stm.extract_slice(np.ones((16, 16)), (8.0, 8.0), 0.0, 12)
        assert not ok[-1] and ok[12]
        assert vals[-1, 0] == 0.0

    def test_slice_pixels_cover_reads(self):
        ids = stm.slice_pixels((30.3, 31.7), 37.0, 20, 1, (64, 64))
        mask = np.zeros(64 * 64, bool)
        mask[ids] = True
        img = np.random.default_rng(0).random((64, 64))
        a, _ = stm.extract_slice(img, (30.3, 31.7), 37.0, 20)
        b, _ = stm.extract_slice(np.where(mask.reshape(64, 64), img, 0.0), (30.3, 31.7), 37.0, 20)
        np.testing.assert_array_equal(a, b)


class TestBuild:
    def test_upwind_is_positive(self):
        frame = np.zeros((41, 41, 3))
        frame[20, 5] = 1.0            # west of the sun at (20.5, 20.5)
        st_ = stm.build_spacetime([frame, frame], [(20.5, 20.5), (20.5, 20.5)], 0.0, 18)
        # clouds move east (wind 0 deg), so upwind is west
        assert np.argmax(st_.data[:, 0, 0]) == 18 + 15

    def test_missing_sun_column_invalid(self):
        frames = [np.ones((32, 32, 3))] * 3
        st_ = stm.build_spacetime(frames, [(16, 16), None, (16, 16)], 45.0, 5)
        assert st_.valid[:, 0].all() and not st_.valid[:, 1].any()
        assert np.isnan(st_.sun[1]).all()

    def test_callable_mask(self):
        frames = [np.ones((32, 32, 3))] * 2
        st_ = stm.build_spacetime(frames, [(16, 16)] * 2, 0.0, 5,
                                  valid_masks=lambda f: np.zeros(f.shape[:2], bool))
        assert not st_.valid.any()

    def test_needs_two_frames(self):
        with pytest.raises(ValueError):
            stm.build_spacetime([np.ones((8, 8, 3))], [(4, 4)], 0.0, 2)

    def test_roundtrip(self, tmp_path):
        s = streaks(70, 1, L=10, F=20)
        s.write(tmp_path / "st")
        back = stm.SpaceTimeImage.read(tmp_path / "st")
        np.testing.assert_allclose(back.data, s.data, rtol=1e-6)
        np.testing.assert_array_equal(back.valid, s.valid)
        assert back.half_len == 10 and back.wind_deg == 0.0


class TestShear:
    def test_unshear_inverts_at_45(self):
        s = streaks(70, 2, L=20, F=60)
        w = stm.shear(s, 45.0, 40, 30, 10)
        raster, ok = stm.unshear(w, 20)
        t = w.rows
        np.testing.assert_allclose(raster[ok], s.data[:, t][ok])
        nt, nc = w.valid.shape
        for ti in range(nt):
            reach = min(20, nc - 1 - ti)
            assert ok[20:21 + reach, ti].all() and not ok[21 + reach:, ti].any()

    def test_streak_becomes_vertical(self):
        s = streaks(72, 3)
        w = stm.shear(s, 72.0, 250, 200, 60)
        r = w.ratio()
        spread = [r[w.valid[:, j], j].std() for j in range(r.shape[1]) if w.valid[:, j].sum() >= 5]
        assert max(spread) < 1e-3

    @pytest.mark.parametrize("theta", [61, 67, 73, 79, 84])
    def test_optimal_theta_recovers(self, theta):
        got, scores = stm.optimal_theta(streaks(theta, 4), 250)
        assert abs(got - theta) <= 1
        assert len(scores) == len(stm.THETA_GRID)

    def test_bad_theta(self):
        with pytest.raises(ValueError):
            stm.shear(streaks(70, 1, L=10, F=20), 90.0, 10, 5, 2)

    def test_anchor_too_early(self):
        with pytest.raises(ValueError):
            stm.shear(streaks(70, 1, L=10, F=20), 70.0, 3, 5, 2)

    def test_no_valid_data(self):
        s = streaks(70, 1, L=20, F=80)
        s.valid[:] = False
        with pytest.raises(stm.InsufficientData):
            stm.optimal_theta(s, 60, tau_max=50, horizon=10)


class TestBackProjection:
    def test_horizon_scores_fill_forward(self):
        tr = stm.RatioTrace(np.arange(10), np.array([0, 1, 2, 3, 4, 5, np.nan, 7, np.nan, np.nan]),
                            np.array([1, 1, 1, 1, 1, 1, 0, 1, 0, 0]))
        np.testing.assert_array_equal(stm.horizon_scores(tr, 5, 4), [5, 7, 7, 7])

    def test_predicts_dip(self, tmp_path):
        s = streaks(70, 5)
        bp = stm.backproject_predict(s, 250, 60, 200, threshold=0.3)
        assert bp.scores.shape == (60,)
        np.testing.assert_array_equal(bp.occluded, bp.scores < 0.3)
        bp.write_csv(tmp_path / "bp.csv")
        assert (tmp_path / "bp.csv").read_text().startswith("horizon_s,trace,occluded\n30.0,")


class TestThreshold:
    @given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=30))
    def test_maximises_youden(self, pairs):
        s = np.array([p[0] for p in pairs], float)
        y = np.array([p[1] for p in pairs])
        if y.all() or not y.any():
            with pytest.raises(ValueError):
                stm.calibrate_threshold(s, y)
            return
        thr = stm.calibrate_threshold(s, y)
        best = max(stm.youden_j(s, y, c) for c in np.arange(-6, 7) + 0.5)
        assert stm.youden_j(s, y, thr) == pytest.approx(best)

    def test_ignores_nonfinite(self):
        thr = stm.calibrate_threshold([0.0, 1.0, np.nan], [True, False, True])
        assert thr == 0.5
