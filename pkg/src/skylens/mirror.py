"""Mirror profile design, hemispherical baseline and forward ray tracing.

Geometry: the camera pinhole sits at the origin looking straight down the
negative z axis at an axially symmetric mirror whose vertex is at
``z = -camera_height``. A sensor ray at angle ``alpha`` from the axis hits
the mirror and is reflected upward at angle ``phi`` from the zenith. The
designed mirror enforces ``tan(phi) = s * tan(alpha)``, i.e. a sky plane at
any height is imaged by a pure scaling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _kernels


class DesignError(ValueError):
    """The requested field of view cannot be produced by the profile."""


class ProfileExportError(OSError):
    """Writing a profile to disk failed."""


@dataclass(frozen=True)
class OpticalConfig:
    """Pinhole camera above a mirror.

    Lengths of the sensor are in mm, the camera height in m, angles in deg.
    """

    sensor_half_width: float = 6.25
    focal_length: float = 200.0
    camera_height: float = 1.0
    target_half_fov: float = 85.0

    def __post_init__(self):
        if self.sensor_half_width <= 0 or self.focal_length <= 0 or self.camera_height <= 0:
            raise ValueError("sensor_half_width, focal_length and camera_height must be > 0")
        if not (self.camera_half_fov <= self.target_half_fov < 90.0):
            raise ValueError(
                f"need camera_half_fov ({self.camera_half_fov:.4f} deg) <= "
                f"target_half_fov ({self.target_half_fov} deg) < 90 deg")

    @classmethod
    def from_full_fovs(cls, target_fov=170.0, camera_fov=3.58, camera_height=1.0,
                       focal_length=200.0):
        """Build from full (not half) angles, as the CLI takes them."""
        half_width = focal_length * math.tan(math.radians(camera_fov / 2.0))
        return cls(half_width, focal_length, camera_height, target_fov / 2.0)

    @property
    def camera_half_fov(self) -> float:
        return math.degrees(math.atan(self.sensor_half_width / self.focal_length))

    @property
    def tan_camera(self) -> float:
        return self.sensor_half_width / self.focal_length

    @property
    def tan_target(self) -> float:
        return math.tan(math.radians(self.target_half_fov))

    @property
    def tangent_scale(self) -> float:
        return self.tan_target / self.tan_camera


@dataclass
class MirrorProfile:
    rho: np.ndarray
    z: np.ndarray
    slope: np.ndarray
    kind: str = "designed"

    @property
    def rim_radius(self) -> float:
        return float(self.rho[-1])

    @property
    def camera_height(self) -> float:
        return float(-self.z[0])

    def __len__(self):
        return len(self.rho)

    def evaluate(self, rho):
        """Interpolated height and slope at radius ``rho``."""
        return _kernels.hermite_eval(self.rho, self.z, self.slope, rho)

    def validate(self):
        if self.rho[0] != 0.0 or np.any(np.diff(self.rho) <= 0):
            raise ValueError("rho must start at 0 and strictly increase")
        if self.slope[0] != 0.0:
            raise ValueError("slope at the vertex must be 0")
        if np.any(np.diff(self.z) > 0):
            raise ValueError("z must be non-increasing in rho")
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.slope))):
            raise ValueError("profile contains non-finite samples")


@dataclass
class AngularMapping:
    """Normalised sensor radius against tangent of the sky half-angle.

    Absent samples (ray outside the mirror or reflected below the horizon)
    are NaN.
    """

    u: np.ndarray
    tan_phi: np.ndarray

    @property
    def present(self):
        return np.isfinite(self.tan_phi)

    def radius_at(self, half_angle_deg):
        """Normalised radius where the mapping reaches ``half_angle_deg``."""
        ok = self.present
        u = np.concatenate([[0.0], self.u[ok]])
        tp = np.concatenate([[0.0], self.tan_phi[ok]])
        target = math.tan(math.radians(half_angle_deg))
        if target > tp[-1]:
            return float("nan")
        return float(np.interp(target, tp, u))

    def linearity_residual(self, tan_end):
        """max |tan_phi(u) - u * tan_end| / tan_end over present samples."""
        ok = self.present
        return float(np.max(np.abs(self.tan_phi[ok] - self.u[ok] * tan_end)) / tan_end)


def _design_slope(rho, z, s):
    alpha = math.atan2(rho, -z)
    phi = math.atan(s * math.tan(alpha))
    # n ~ d_out - d_in  =>  dz/drho = -tan((phi - alpha) / 2)
    slope = -math.tan(0.5 * (phi - alpha))
    if not math.isfinite(slope):
        raise DesignError("target FoV unreachable: non-finite slope")
    return slope


def _rk4(rho, z, h, s):
    k1 = _design_slope(rho, z, s)
    k2 = _design_slope(rho + 0.5 * h, z + 0.5 * h * k1, s)
    k3 = _design_slope(rho + 0.5 * h, z + 0.5 * h * k2, s)
    k4 = _design_slope(rho + h, z + h * k3, s)
    return z + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def solve_profile(config: OpticalConfig, step: float = 1e-4) -> MirrorProfile:
    """Integrate the designed mirror outward from the vertex.

    Fixed-step RK4 in ``rho``; the last step is shortened so the final sample
    sits exactly on the sensor edge ray.
    """
    if not step > 0:
        raise ValueError("step must be > 0")
    if step > 1e-3:
        raise ValueError("step must be <= 1e-3 m")
    s = config.tangent_scale
    tan_max = config.tan_camera
    c = config.camera_height

    rhos = [0.0]
    zs = [-c]
    rho, z = 0.0, -c
    while True:
        z_next = _rk4(rho, z, step, s)
        if (rho + step) / -z_next >= tan_max:
            break
        rho += step
        z = z_next
        rhos.append(rho)
        zs.append(z)
        if len(rhos) > 10_000_000:
            raise DesignError("integration did not reach the sensor edge")

    def edge(h):
        return (rho + h) / -_rk4(rho, z, h, s) - tan_max

    if edge(0.0) < 0.0:
        h_last = brentq(edge, 0.0, step, xtol=1e-16, rtol=1e-15)
        rhos.append(rho + h_last)
        zs.append(_rk4(rho, z, h_last, s))

    rho_a = np.array(rhos)
    z_a = np.array(zs)
    slope = np.array([_design_slope(r, zz, s) for r, zz in zip(rho_a, z_a)])
    slope[0] = 0.0
    return MirrorProfile(rho_a, z_a, slope, "designed")


def plane_profile(rim_radius: float, camera_height: float, n: int = 64) -> MirrorProfile:
    rho = np.linspace(0.0, rim_radius, n)
    return MirrorProfile(rho, np.full(n, -camera_height), np.zeros(n), "plane")


def hemisphere_profile(radius: float, camera_height: float, n: int = 4001) -> MirrorProfile:
    """Sphere cap whose top touches ``z = -camera_height``, sampled to 0.999 R."""
    if radius <= 0 or camera_height <= 0:
        raise ValueError("radius and camera_height must be > 0")
    rho = np.linspace(0.0, 0.999 * radius, n)
    root = np.sqrt(radius * radius - rho * rho)
    z = -camera_height - radius + root
    slope = -rho / root
    return MirrorProfile(rho, z, slope, "hemisphere")


def _sphere_edge_angle(radius, config):
    """Reflected zenith angle (rad) of the sensor-edge ray off a sphere cap."""
    ta = config.tan_camera
    inv = 1.0 / math.sqrt(1.0 + ta * ta)
    d = (ta * inv, -inv)
    centre_z = -(config.camera_height + radius)
    dc = d[1] * centre_z
    disc = dc * dc - centre_z * centre_z + radius * radius
    if disc < 0:
        return math.pi
    t = dc - math.sqrt(disc)
    p = (t * d[0], t * d[1])
    n = (p[0] / radius, (p[1] - centre_z) / radius)
    dot = d[0] * n[0] + d[1] * n[1]
    out = (d[0] - 2 * dot * n[0], d[1] - 2 * dot * n[1])
    return math.atan2(out[0], out[1])


def matched_hemisphere_radius(config: OpticalConfig) -> float:
    """Sphere radius whose sky disc at the target half-FoV fills the sensor.

    With this radius the sensor-edge ray reflects to exactly
    ``target_half_fov``, so both mirrors image the same sky cone onto the same
    sensor circle.
    """
    target = math.radians(config.target_half_fov)
    c = config.camera_height
    lo = c * config.tan_camera * 0.5
    hi = c * 10.0
    return brentq(lambda r: _sphere_edge_angle(r, config) - target, lo, hi, xtol=1e-15)


def matched_hemisphere(config: OpticalConfig) -> MirrorProfile:
    return hemisphere_profile(matched_hemisphere_radius(config), config.camera_height)


@dataclass
class RayTrace:
    """Per-ray mirror hit and reflected direction (meridional plane)."""

    tan_alpha: np.ndarray
    hit_rho: np.ndarray
    hit_z: np.ndarray
    out_rho: np.ndarray
    out_z: np.ndarray
    valid: np.ndarray

    @property
    def sky(self):
        """Rays that hit the mirror and leave above the horizon."""
        return self.valid & (self.out_z > 0.0)

    @property
    def tan_phi(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.sky, self.out_rho / self.out_z, np.nan)

    @property
    def phi(self):
        return np.where(self.valid, np.arctan2(self.out_rho, self.out_z), np.nan)


def trace(profile: MirrorProfile, tan_alpha) -> RayTrace:
    tan_alpha = np.asarray(tan_alpha, dtype=np.float64).ravel()
    hr, hz, orr, oz, valid = _kernels.trace_rays(profile.rho, profile.z, profile.slope,
                                                 tan_alpha)
    return RayTrace(tan_alpha, hr, hz, orr, oz, valid)


def forward_trace_mapping(profile: MirrorProfile, config: OpticalConfig,
                          n_rays: int = 2048) -> AngularMapping:
    if n_rays < 16:
        raise ValueError("n_rays must be >= 16")
    u = np.arange(1, n_rays + 1) / n_rays
    tr = trace(profile, u * config.tan_camera)
    return AngularMapping(u, tr.tan_phi)


@dataclass
class ConicFit:
    """Conic ``A rho^2 + B rho z + C z^2 + D rho + E z + F = 0``.

    Coefficients are in metres and scaled to unit norm.
    """

    coefficients: np.ndarray
    kind: str
    eccentricity: float
    rms_residual: float
    max_residual: float

    @property
    def degenerate(self) -> bool:
        return self.kind == "degenerate"


def conic_eccentricity(coef, tol=1e-9):
    """Kind and eccentricity of a general conic from its coefficients."""
    A, B, C, D, E, F = coef
    Q = np.array([[A, B / 2.0], [B / 2.0, C]])
    lam = np.linalg.eigvalsh(Q)
    scale = max(np.abs(coef).max(), 1e-300)
    if np.all(np.abs(lam) < tol * scale):
        return "degenerate", float("nan")
    if np.min(np.abs(lam)) < tol * scale:
        return "parabola", 1.0
    centre = np.linalg.solve(2.0 * Q, -np.array([D, E]))
    K = F + 0.5 * (D * centre[0] + E * centre[1])
    if abs(K) < tol * scale:
        return "degenerate", float("nan")
    l1, l2 = lam
    if l1 * l2 > 0:
        e2 = 1.0 - min(abs(l1), abs(l2)) / max(abs(l1), abs(l2))
        e = math.sqrt(max(e2, 0.0))
        return ("circle" if e < 1e-6 else "ellipse"), e
    # transverse axis along the eigenvector with -K / lambda > 0
    if -K / l1 > 0:
        return "hyperbola", math.sqrt(1.0 - l1 / l2)
    return "hyperbola", math.sqrt(1.0 - l2 / l1)


def fit_conic(profile: MirrorProfile) -> ConicFit:
    """Algebraic least-squares conic through the (rho, z) samples.

    Fitting is done in coordinates centred on the vertex and scaled by the
    rim radius; the reported residual is the first-order geometric (Sampson)
    distance in metres. A planar profile is rank-deficient and flagged
    degenerate with zero residual.
    """
    if len(profile) < 10:
        raise ValueError("need at least 10 samples")
    rho = profile.rho
    z = profile.z
    z0 = float(z[0])
    s = max(profile.rim_radius, float(np.ptp(z)), 1e-12)
    x = rho / s
    w = (z - z0) / s
    design = np.column_stack([x * x, x * w, w * w, x, w, np.ones_like(x)])
    _, sv, vt = np.linalg.svd(design, full_matrices=False)
    if sv[-2] <= 1e-10 * sv[0]:
        line = np.array([0.0, 0.0, 0.0, 0.0, 1.0, -z0])
        return ConicFit(line / np.linalg.norm(line), "degenerate", float("nan"), 0.0, 0.0)
    a, b, c, d, e, f = q = vt[-1]
    val = design @ q
    grad = np.hypot(2 * a * x + b * w + d, b * x + 2 * c * w + e)
    dist = np.abs(val) / np.maximum(grad, 1e-300) * s
    kind, ecc = conic_eccentricity(q)
    # undo x = rho/s, w = (z - z0)/s
    A, B, C = a / s**2, b / s**2, c / s**2
    D = d / s - b * z0 / s**2
    E = e / s - 2 * c * z0 / s**2
    F = f - e * z0 / s + c * z0**2 / s**2
    coef = np.array([A, B, C, D, E, F])
    return ConicFit(coef / np.linalg.norm(coef), kind, ecc,
                    float(np.sqrt(np.mean(dist**2))), float(dist.max()))


def export_profile_csv(profile: MirrorProfile, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["rho", "z", "slope"])
            for r, z, m in zip(profile.rho, profile.z, profile.slope):
                wr.writerow([f"{r:.9g}", f"{z:.9g}", f"{m:.9g}"])
    except OSError as exc:
        raise ProfileExportError(f"cannot write profile to {path}: {exc}") from exc


def load_profile_csv(path, kind="designed") -> MirrorProfile:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return MirrorProfile(data[:, 0], data[:, 1], data[:, 2], kind)


def fit_conic_and_export(profile: MirrorProfile, path) -> ConicFit:
    fit = fit_conic(profile)
    export_profile_csv(profile, path)
    return fit
