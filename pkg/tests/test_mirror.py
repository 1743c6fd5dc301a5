import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skylens import mirror


def five_point_slope(z, h, i):
    return (-z[i + 2] + 8 * z[i + 1] - 8 * z[i - 1] + z[i - 2]) / (12 * h)


class TestOpticalConfig:
    def test_defaults(self, optical):
        assert optical.camera_half_fov == pytest.approx(1.79, abs=0.01)
        assert optical.tan_target == pytest.approx(11.430, abs=1e-3)
        assert optical.tangent_scale == pytest.approx(optical.tan_target / optical.tan_camera)

    def test_from_full_fovs_matches_half_angles(self):
        cfg = mirror.OpticalConfig.from_full_fovs(170.0, 3.58, 1.0)
        assert cfg.target_half_fov == 85.0
        assert cfg.camera_half_fov == pytest.approx(1.79, abs=1e-9)

    @pytest.mark.parametrize("kw", [dict(camera_height=0.0), dict(focal_length=-1.0),
                                    dict(target_half_fov=90.0), dict(target_half_fov=1.0)])
    def test_rejects_bad_geometry(self, kw):
        with pytest.raises(ValueError):
            mirror.OpticalConfig(**kw)


class TestDesignedProfile:
    def test_profile_invariants(self, designed):
        designed.validate()
        assert designed.rho[0] == 0.0 and designed.slope[0] == 0.0
        assert designed.camera_height == pytest.approx(1.0)

    def test_last_sample_on_sensor_edge_ray(self, designed, optical):
        assert designed.rho[-1] / -designed.z[-1] == pytest.approx(optical.tan_camera, rel=1e-12)

    def test_slope_matches_finite_difference(self, designed):
        # interior points on the uniform part of the grid
        i = np.arange(2, len(designed) - 3)
        fd = five_point_slope(designed.z, 1e-4, i)
        rel = np.abs(fd - designed.slope[i]) / np.abs(designed.slope[i])
        assert rel.max() < 1e-6

    def test_step_halving_converges(self, optical, designed):
        fine = mirror.solve_profile(optical, step=5e-5)
        assert abs(fine.rim_radius - designed.rim_radius) < 1e-9
        assert abs(fine.z[-1] - designed.z[-1]) < 1e-9

    def test_mapping_is_linear(self, designed, optical):
        m = mirror.forward_trace_mapping(designed, optical, 1000)
        assert m.present.all()
        assert m.linearity_residual(optical.tan_target) < 1e-3
        assert m.tan_phi[-1] == pytest.approx(math.tan(math.radians(85.0)), abs=1e-3)

    @pytest.mark.parametrize("step", [0.0, -1e-4, 2e-3])
    def test_bad_step(self, optical, step):
        with pytest.raises(ValueError):
            mirror.solve_profile(optical, step)

    def test_unit_scale_gives_plane(self, optical):
        cfg = mirror.OpticalConfig(target_half_fov=optical.camera_half_fov)
        p = mirror.solve_profile(cfg)
        assert np.all(np.abs(p.slope) < 1e-12)
        assert np.all(p.z == -cfg.camera_height)
        assert mirror.fit_conic(p).degenerate

    @given(target=st.floats(60.0, 87.0), height=st.floats(0.3, 3.0))
    def test_linear_for_any_target(self, target, height):
        cfg = mirror.OpticalConfig(camera_height=height, target_half_fov=target)
        p = mirror.solve_profile(cfg, step=1e-4 * height)
        m = mirror.forward_trace_mapping(p, cfg, 256)
        assert m.linearity_residual(cfg.tan_target) < 1e-3
        assert np.all(np.diff(p.z) <= 0)


class TestHemisphere:
    def test_edge_ray_reaches_target(self, hemisphere, optical):
        tr = mirror.trace(hemisphere, [optical.tan_camera])
        assert math.degrees(tr.phi[0]) == pytest.approx(optical.target_half_fov, abs=1e-3)

    def test_compresses_centre(self, hemisphere, designed, optical):
        uh = mirror.forward_trace_mapping(hemisphere, optical).radius_at(45.0)
        ud = mirror.forward_trace_mapping(designed, optical).radius_at(45.0)
        assert uh > 0.5
        assert ud < 0.15

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            mirror.hemisphere_profile(0.0, 1.0)


class TestTrace:
    @given(st.floats(0.0, 0.0312))
    def test_reflection_law(self, tan_alpha):
        p = mirror.hemisphere_profile(0.05, 1.0)
        tr = mirror.trace(p, [tan_alpha])
        assert tr.valid[0]
        inv = 1 / math.sqrt(1 + tan_alpha**2)
        d = np.array([tan_alpha * inv, -inv])
        out = np.array([tr.out_rho[0], tr.out_z[0]])
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
        # surface normal of the sphere at the hit point
        centre = np.array([0.0, -1.05])
        n = np.array([tr.hit_rho[0], tr.hit_z[0]]) - centre
        n /= np.linalg.norm(n)
        assert np.dot(out, n) == pytest.approx(-np.dot(d, n), abs=1e-9)
        # hit point lies on the pinhole ray
        assert tr.hit_rho[0] == pytest.approx(-tr.hit_z[0] * tan_alpha, abs=1e-12)

    def test_miss_outside_rim(self, designed, optical):
        tr = mirror.trace(designed, [optical.tan_camera * 1.5])
        assert not tr.valid[0]
        assert np.isnan(tr.tan_phi[0])

    def test_axial_ray_goes_straight_up(self, designed):
        tr = mirror.trace(designed, [0.0])
        assert tr.out_rho[0] == 0.0 and tr.out_z[0] == pytest.approx(1.0)

    def test_too_few_rays(self, designed, optical):
        with pytest.raises(ValueError):
            mirror.forward_trace_mapping(designed, optical, 8)


class TestConic:
    def test_designed_is_hyperbola(self, designed):
        fit = mirror.fit_conic(designed)
        assert fit.kind == "hyperbola"
        assert fit.eccentricity > 1.0
        assert fit.rms_residual < 1e-5
        assert np.linalg.norm(fit.coefficients) == pytest.approx(1.0)

    def test_sphere_is_circle(self):
        fit = mirror.fit_conic(mirror.hemisphere_profile(0.05, 1.0, n=200))
        assert fit.kind == "circle"
        assert fit.rms_residual < 1e-9

    @given(a=st.floats(0.5, 5.0), b=st.floats(0.5, 5.0))
    def test_known_ellipse_eccentricity(self, a, b):
        coef = np.array([1 / a**2, 0.0, 1 / b**2, 0.0, 0.0, -1.0])
        kind, e = mirror.conic_eccentricity(coef)
        lo, hi = sorted((a, b))
        assert e == pytest.approx(math.sqrt(1 - (lo / hi) ** 2), abs=1e-9)
        assert kind in ("circle", "ellipse")

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            mirror.fit_conic(mirror.plane_profile(0.03, 1.0, n=5))


class TestExport:
    def test_csv_roundtrip(self, designed, tmp_path):
        p = tmp_path / "m.csv"
        fit = mirror.fit_conic_and_export(designed, p)
        back = mirror.load_profile_csv(p)
        assert p.read_text().splitlines()[0] == "rho,z,slope"
        np.testing.assert_allclose(back.z, designed.z, rtol=1e-8)
        assert fit.kind == "hyperbola"

    def test_unwritable_path(self, designed, tmp_path):
        with pytest.raises(mirror.ProfileExportError):
            mirror.export_profile_csv(designed, tmp_path / "missing" / "m.csv")
