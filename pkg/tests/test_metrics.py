import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skylens.harness.metrics import nrmse, pair_count_auc, roc_auc
from skylens.harness.runmanifest import RunManifest, path_sha256
from skylens.harness.tables import HorizonTable, write_svg

labelled = st.lists(st.tuples(st.integers(-4, 4), st.booleans()), min_size=2, max_size=40)


class TestRoc:
    def test_perfect_and_inverted(self):
        y = [True, True, False, False]
        assert roc_auc([0.1, 0.2, 0.8, 0.9], y).auc == 1.0
        assert roc_auc([0.9, 0.8, 0.2, 0.1], y).auc == 0.0

    def test_all_tied_is_half(self):
        assert roc_auc([1.0] * 6, [True, False] * 3).auc == 0.5

    def test_hand_example(self):
        # lower score = occluded; pairs (p, n): 3 of 4 concordant
        assert roc_auc([0.1, 0.6, 0.5, 0.9], [True, True, False, False]).auc == 0.75

    @given(labelled)
    def test_matches_pair_count(self, pairs):
        s = [float(p[0]) for p in pairs]
        y = [p[1] for p in pairs]
        if all(y) or not any(y):
            with pytest.raises(ValueError):
                roc_auc(s, y)
            return
        assert roc_auc(s, y).auc == pytest.approx(pair_count_auc(s, y), abs=1e-12)

    @given(labelled)
    def test_curve_monotone(self, pairs):
        y = [p[1] for p in pairs]
        if all(y) or not any(y):
            return
        c = roc_auc([float(p[0]) for p in pairs], y)
        assert c.fpr[0] == c.tpr[0] == 0.0 and c.fpr[-1] == c.tpr[-1] == 1.0
        assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)

    @given(labelled, st.floats(0.1, 10), st.floats(-5, 5))
    def test_invariant_to_monotone_map(self, pairs, a, b):
        y = [p[1] for p in pairs]
        if all(y) or not any(y):
            return
        s = np.array([float(p[0]) for p in pairs])
        assert roc_auc(a * s + b, y).auc == pytest.approx(roc_auc(s, y).auc, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            roc_auc([1.0, 2.0], [True])
        with pytest.raises(ValueError):
            roc_auc([np.nan, 1.0], [True, False])


class TestNrmse:
    def test_worked_example(self):
        assert nrmse([110, 190], [100, 200]) == pytest.approx(0.06325, abs=1e-5)

    def test_perfect(self):
        assert nrmse([3.0, 4.0], [3.0, 4.0]) == 0.0

    @given(st.lists(st.floats(1, 1e3), min_size=1, max_size=20), st.floats(0.1, 10))
    def test_scale_invariant(self, a, k):
        a = np.array(a)
        p = a[::-1]
        assert nrmse(k * p, k * a) == pytest.approx(nrmse(p, a), rel=1e-9)

    def test_errors(self):
        with pytest.raises(ValueError):
            nrmse([1.0], [1.0, 2.0])
        with pytest.raises(ZeroDivisionError):
            nrmse([1.0], [0.0])


class TestTable:
    def make(self, shift=0.0):
        t = HorizonTable()
        for h in (30, 60):
            t.add(h, "backprojection", "designed", "auc", 0.8 + shift + h / 1000, 10)
        t.add(90, "backprojection", "designed", "auc", float("nan"), 10)
        return t

    def test_csv_roundtrip(self, tmp_path):
        t = self.make()
        t.write_csv(tmp_path / "t.csv")
        back = HorizonTable.read_csv(tmp_path / "t.csv")
        assert back.rows == t.rows
        h, v = back.series("backprojection", "designed", "auc")
        np.testing.assert_array_equal(h, [30, 60, 90])
        assert math.isnan(v[2])

    def test_mean_of(self):
        m = HorizonTable.mean_of([self.make(0.0), self.make(0.1)])
        _, v = m.series("backprojection", "designed", "auc")
        assert v[0] == pytest.approx(0.88)
        assert m.rows[0][5] == 20

    def test_svg(self, tmp_path):
        write_svg(self.make(), "auc", tmp_path / "a.svg", "t & t")
        text = (tmp_path / "a.svg").read_text()
        assert text.startswith("<svg") and "t &amp; t" in text and "polyline" in text


class TestRunManifest:
    def test_hash_stable_and_verifiable(self, tmp_path):
        f = tmp_path / "a.txt"
        f.write_text("x")
        d = tmp_path / "d"
        d.mkdir()
        (d / "b.txt").write_text("y")
        m = RunManifest("cmd", {"k": 1}, 3)
        m.add_artifact(f)
        m.add_artifact(d)
        p = m.write(tmp_path)
        back = RunManifest.read(p)
        assert back.content_hash == m.content_hash
        assert back.verify() == []
        (d / "b.txt").write_text("z")
        assert back.verify() == [str(d)]

    def test_order_independent(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        a.write_text("1")
        b.write_text("2")
        m1, m2 = RunManifest("c", {}, 0), RunManifest("c", {}, 0)
        m1.add_input(a), m1.add_input(b)
        m2.add_input(b), m2.add_input(a)
        assert m1.content_hash == m2.content_hash
        assert RunManifest("c", {}, 1).content_hash != RunManifest("c", {}, 0).content_hash

    def test_tamper_detected(self, tmp_path):
        p = RunManifest("c", {}, 0).write(tmp_path / "m.json")
        d = json.loads(p.read_text())
        d["seed"] = 5
        p.write_text(json.dumps(d))
        with pytest.raises(ValueError, match="hash"):
            RunManifest.read(p)

    def test_directory_hash_sees_names(self, tmp_path):
        for name in ("x", "y"):
            (tmp_path / name).mkdir()
        (tmp_path / "x" / "f").write_text("1")
        (tmp_path / "y" / "g").write_text("1")
        assert path_sha256(tmp_path / "x") != path_sha256(tmp_path / "y")
