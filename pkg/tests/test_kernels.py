"""Compiled and numpy kernels must agree; the noise must behave like noise."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skylens import _kernels
from skylens._kernels import python as pyk

needs_ext = pytest.mark.skipif(_kernels.compiled is None, reason="compiled kernels not built")
coords = st.floats(-1e4, 1e4, allow_nan=False)


def test_backend_name():
    assert _kernels.BACKEND_NAME in ("cython", "numpy")


@given(x=coords, y=coords, seed=st.integers(0, 2**62))
def test_fbm_range(x, y, seed):
    v = float(pyk.fbm(np.array([x]), np.array([y]), seed, 4, 2.0, 0.5)[0])
    assert 0.0 <= v <= 1.0


@given(seed=st.integers(0, 2**62), ix=st.integers(-1000, 1000), iy=st.integers(-1000, 1000))
def test_value_noise_interpolates_lattice(seed, ix, iy):
    key = pyk.octave_key(seed, 0)
    corner = pyk.value_noise(np.array([float(ix)]), np.array([float(iy)]), key)
    lat = pyk._lattice(np.array([ix], np.int64), np.array([iy], np.int64), key)
    assert corner[0] == lat[0]


def test_fbm_continuous():
    x = np.linspace(0, 5, 2001)
    v = pyk.fbm(x, np.zeros_like(x), 3, 4, 2.0, 0.5)
    assert np.abs(np.diff(v)).max() < 0.05


def test_fbm_seeds_differ():
    x = np.linspace(0, 10, 500)
    a = pyk.fbm(x, x, 1, 4, 2.0, 0.5)
    b = pyk.fbm(x, x, 2, 4, 2.0, 0.5)
    assert np.abs(a - b).mean() > 0.05


@needs_ext
class TestParity:
    def test_octave_key(self):
        for seed in (0, 1, 12345, 2**62 - 1):
            for o in range(6):
                assert _kernels.compiled.octave_key(seed, o) == pyk.octave_key(seed, o)

    @given(seed=st.integers(0, 2**62))
    def test_fbm_bitwise(self, seed):
        r = np.random.default_rng(seed % 1000)
        x, y = r.uniform(-50, 50, 300), r.uniform(-50, 50, 300)
        a = _kernels.compiled.fbm(x, y, seed, 4, 2.0, 0.5)
        b = pyk.fbm(x, y, seed, 4, 2.0, 0.5)
        np.testing.assert_array_equal(a, b)

    def test_hermite(self, designed):
        x = np.linspace(0, designed.rim_radius, 777)
        for a, b in zip(_kernels.compiled.hermite_eval(designed.rho, designed.z, designed.slope, x),
                        pyk.hermite_eval(designed.rho, designed.z, designed.slope, x)):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)

    def test_trace(self, designed, hemisphere, optical):
        ta = np.linspace(0, 1.2 * optical.tan_camera, 501)
        for prof in (designed, hemisphere):
            a = _kernels.compiled.trace_rays(prof.rho, prof.z, prof.slope, ta)
            b = pyk.trace_rays(prof.rho, prof.z, prof.slope, ta)
            np.testing.assert_array_equal(a[4], b[4])
            for u, v in zip(a[:4], b[:4]):
                np.testing.assert_allclose(u, v, rtol=0, atol=1e-13)

    def test_shear_stats(self):
        r = np.random.default_rng(5)
        L, F = 40, 120
        red = r.uniform(0.1, 1, (2 * L + 1, F))
        blue = r.uniform(0.1, 1, (2 * L + 1, F))
        valid = r.random((2 * L + 1, F)) > 0.1
        tans = np.tan(np.radians(np.arange(60, 86)))
        a = _kernels.compiled.shear_stats(red, blue, valid, 80, tans, 60, 20, L, 5)
        b = pyk.shear_stats(red, blue, valid, 80, tans, 60, 20, L, 5)
        np.testing.assert_allclose(a, b, rtol=1e-12, equal_nan=True)
