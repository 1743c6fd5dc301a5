"""Rendering of catadioptric sky frames and their ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CatadioptricCamera, camera_for
from .clouds import CloudField
from .sun import SunEphemeris

SUN_RADIANCE = 4000.0
OCCLUSION_LEVEL = 0.5

_ZENITH_RGB = np.array([0.20, 0.36, 0.80])
_HORIZON_RGB = np.array([0.55, 0.62, 0.76])
_AUREOLE_RGB = np.array([1.0, 0.97, 0.92])
_CLOUD_RGB = np.array([1.0, 1.0, 1.03])


@dataclass
class SkyFrame:
    timestamp: float
    hdr: np.ndarray
    sun_pixel: tuple | None
    occluded: bool
    ghi_true: float
    mirror: str
    valid: np.ndarray = field(repr=False, default=None)
    sun_opacity: float = 0.0


@dataclass(frozen=True)
class Checkerboard:
    """Square board of alternating cells on a horizontal plane above the mirror."""

    height: float = 2000.0
    size: float = 50000.0
    cell: float = 1000.0
    white: float = 1.0
    black: float = 0.05
    background: float = 0.4

    def shade(self, camera: CatadioptricCamera, t, sub):
        px, py, ok = camera.plane_points(self.height, sub)
        half = self.size / 2.0
        on = ok & (np.abs(px) <= half) & (np.abs(py) <= half)
        with np.errstate(invalid="ignore"):
            parity = (np.floor(np.nan_to_num(px) / self.cell)
                      + np.floor(np.nan_to_num(py) / self.cell)) % 2
        value = np.where(on, np.where(parity == 0, self.white, self.black), self.background)
        return np.repeat(value[:, None], 3, axis=1)


@dataclass(frozen=True)
class CloudScene:
    clouds: CloudField
    sun: SunEphemeris

    def sun_opacity(self, t) -> float:
        d = self.sun.direction(t)
        if d[2] <= 0:
            return 0.0
        s = self.clouds.height / d[2]
        return float(self.clouds.opacity(s * d[0], s * d[1], t))

    def brightness(self, t) -> float:
        return 0.25 + 0.75 * max(math.sin(float(self.sun.elevation(t))), 0.0)

    def shade(self, camera: CatadioptricCamera, t, sub):
        dirs = camera.directions if sub is None else camera.directions[sub]
        px, py, ok = camera.plane_points(self.clouds.height, sub)
        opac = np.zeros(len(px))
        if ok.any():
            opac[ok] = self.clouds.opacity(px[ok], py[ok], t)
        zen = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
        w = np.clip(zen / (0.5 * np.pi), 0.0, 1.0) ** 2
        sky = _ZENITH_RGB[None, :] * (1.0 - w[:, None]) + _HORIZON_RGB[None, :] * w[:, None]
        gamma = np.arccos(np.clip(dirs @ self.sun.direction(t), -1.0, 1.0))
        sky = sky + 0.8 * np.exp(-gamma / 0.06)[:, None] * _AUREOLE_RGB[None, :]
        cloud = (0.72 + 0.5 * np.exp(-gamma / 0.25))[:, None] * _CLOUD_RGB[None, :]
        rad = (1.0 - opac)[:, None] * sky + opac[:, None] * cloud
        return self.brightness(t) * rad


def ground_truth(scene: CloudScene, t):
    """(occluded, ghi_true, sun_opacity) at time ``t``.

    GHI = clear-sky GHI * (diffuse + (1 - diffuse) * (1 - opacity at the sun ray)).
    """
    if float(scene.sun.elevation(t)) <= 0.0:
        return False, 0.0, 0.0
    o_sun = scene.sun_opacity(t)
    g_clear = float(scene.sun.clear_ghi(t))
    df = scene.sun.diffuse_fraction
    ghi = g_clear * (df + (1.0 - df) * (1.0 - o_sun))
    return bool(o_sun > OCCLUSION_LEVEL), ghi, o_sun


def _shade_pixels(camera, scene, t, flat_pixels=None):
    k = camera.supersample ** 2
    sub = None if flat_pixels is None else camera.subsample_ids(flat_pixels)
    rad = scene.shade(camera, t, sub)
    valid = camera.valid if sub is None else camera.valid[sub]
    rad = np.where(valid[:, None], rad, 0.0)
    rad = rad.reshape(-1, k, 3).mean(axis=1)
    pvalid = valid.reshape(-1, k).all(axis=1)
    rad[~pvalid] = 0.0
    return rad, pvalid


def _sun_weights(camera, sun_xy, angular_radius, flat_pixels):
    """Anti-aliased coverage of the sun's image disc for the given pixels."""
    n = camera.resolution
    rows, cols = np.divmod(np.asarray(flat_pixels, dtype=np.int64), n)
    d = np.hypot(cols + 0.5 - sun_xy[0], rows + 0.5 - sun_xy[1])
    pitch = camera.pixel_pitch(*sun_xy)
    r_img = max(math.radians(angular_radius) / max(pitch, 1e-12), 0.6)
    return np.clip(r_img + 0.5 - d, 0.0, 1.0)


def _sun_state(camera, scene, t):
    if not isinstance(scene, CloudScene):
        return None, 0.0
    d = scene.sun.direction(t)
    if d[2] <= 0:
        return None, 0.0
    xy = camera.project(d)
    if xy is None:
        return None, 0.0
    return xy, SUN_RADIANCE * scene.brightness(t) * (1.0 - scene.sun_opacity(t))


def render_pixels(camera, scene, t, flat_pixels):
    """Radiance and validity of selected pixels (flat ids ``row * W + col``).

    Identical, pixel for pixel, to the corresponding entries of a full
    :func:`render_frame`.
    """
    flat_pixels = np.asarray(flat_pixels, dtype=np.int64)
    rad, ok = _shade_pixels(camera, scene, t, flat_pixels)
    sun_xy, sun_level = _sun_state(camera, scene, t)
    if sun_xy is not None and sun_level > 0:
        w = _sun_weights(camera, sun_xy, scene.sun.angular_radius, flat_pixels)
        rad = rad + np.where(ok, w * sun_level, 0.0)[:, None]
    return rad, ok


def render_frame(camera, scene, t, resolution=256, config=None, supersample=1) -> SkyFrame:
    """Render one frame.

    ``camera`` is either a :class:`CatadioptricCamera` or a mirror profile
    (then ``config`` is required and the ray table is cached).
    """
    if not isinstance(camera, CatadioptricCamera):
        if config is None:
            raise ValueError("config is required when passing a profile")
        if resolution < 64:
            raise ValueError("resolution must be >= 64")
        camera = camera_for(camera, config, resolution, supersample)
    n = camera.resolution
    flat = np.arange(n * n)
    rad, ok = render_pixels(camera, scene, t, flat)
    hdr = rad.reshape(n, n, 3)
    valid = ok.reshape(n, n)
    if isinstance(scene, CloudScene):
        occluded, ghi, o_sun = ground_truth(scene, t)
        sun_xy, _ = _sun_state(camera, scene, t)
    else:
        occluded, ghi, o_sun, sun_xy = False, 0.0, 0.0, None
    return SkyFrame(float(t), hdr, sun_xy, occluded, ghi, camera.kind, valid, o_sun)
