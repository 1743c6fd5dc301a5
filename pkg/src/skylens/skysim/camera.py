"""Per-pixel ray tables for a pinhole camera looking down at a mirror.

Image convention: pixel ``(row, col)`` has its centre at continuous position
``(x, y) = (col + 0.5, row + 0.5)``. The offset of a pixel from the image
centre points in the same horizontal direction as the sky ray it sees, so a
world vector ``(dx, dy)`` appears as image offset ``(+x, +y)``. The mirror's
sky disc is inscribed in the square image (rim radius ``W / 2`` pixels).
"""

from __future__ import annotations

import math

import numpy as np

from .. import mirror as _mirror


class CatadioptricCamera:
    """Rays of every (sub)pixel traced once through a mirror profile.

    Attributes ``directions`` (N, 3), ``hits`` (N, 3) and ``valid`` (N,) are
    indexed by flat subsample id ``(row * W + col) * ss^2 + k``. Hit points
    are in the ground frame: mirror vertex at the origin, camera pinhole at
    ``z = camera_height``.
    """

    def __init__(self, profile: _mirror.MirrorProfile, config: _mirror.OpticalConfig,
                 resolution: int = 256, supersample: int = 1):
        if resolution < 8:
            raise ValueError("resolution too small")
        if supersample < 1:
            raise ValueError("supersample must be >= 1")
        self.profile = profile
        self.config = config
        self.resolution = int(resolution)
        self.supersample = int(supersample)
        self.kind = profile.kind
        self.rim_px = resolution / 2.0
        self._build()
        self._build_radial_table()

    @property
    def shape(self):
        return (self.resolution, self.resolution)

    def _sub_offsets(self):
        ss = self.supersample
        g = (np.arange(ss) + 0.5) / ss
        oy, ox = np.meshgrid(g, g, indexing="ij")
        return ox.ravel(), oy.ravel()

    def _build(self):
        n = self.resolution
        ox, oy = self._sub_offsets()
        cols, rows = np.meshgrid(np.arange(n), np.arange(n))
        x = (cols.reshape(-1, 1) + ox[None, :]).ravel()
        y = (rows.reshape(-1, 1) + oy[None, :]).ravel()
        self.directions, self.hits, self.valid = self.rays_at(x, y)
        pix_valid = self.valid.reshape(n * n, -1).all(axis=1)
        self.pixel_valid = pix_valid.reshape(n, n)

    def rays_at(self, x, y):
        """Sky direction, mirror hit and validity for continuous pixel positions."""
        x = np.asarray(x, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        dx = x - self.rim_px
        dy = y - self.rim_px
        r = np.hypot(dx, dy) / self.rim_px
        psi = np.arctan2(dy, dx)
        inside = r <= 1.0
        tan_alpha = np.minimum(r, 1.0) * self.config.tan_camera
        tr = _mirror.trace(self.profile, tan_alpha)
        cp, sp = np.cos(psi), np.sin(psi)
        dirs = np.stack([tr.out_rho * cp, tr.out_rho * sp, tr.out_z], axis=1)
        hits = np.stack([tr.hit_rho * cp, tr.hit_rho * sp,
                         tr.hit_z + self.config.camera_height], axis=1)
        valid = inside & tr.sky
        return dirs, hits, valid

    def _build_radial_table(self, n=8193):
        u = np.linspace(0.0, 1.0, n)
        tr = _mirror.trace(self.profile, u * self.config.tan_camera)
        phi = tr.phi
        ok = np.isfinite(phi) & tr.sky
        # keep the monotone sky part only
        last = np.argmax(~ok) if not ok.all() else n
        self._table_u = u[:last]
        self._table_phi = phi[:last]
        if np.any(np.diff(self._table_phi) <= 0):
            raise ValueError("mirror mapping is not monotone in sensor radius")

    @property
    def max_zenith(self) -> float:
        """Largest sky zenith angle (rad) imaged inside the rim."""
        return float(self._table_phi[-1])

    def radius_for_zenith(self, zenith):
        """Normalised sensor radius imaging a zenith angle (NaN if outside)."""
        zenith = np.asarray(zenith, dtype=np.float64)
        u = np.interp(zenith, self._table_phi, self._table_u)
        return np.where(zenith <= self._table_phi[-1], u, np.nan)

    def project(self, direction):
        """Continuous pixel position ``(x, y)`` of a world direction, or None."""
        d = np.asarray(direction, dtype=np.float64)
        zen = math.acos(max(-1.0, min(1.0, d[2] / np.linalg.norm(d))))
        u = float(self.radius_for_zenith(zen))
        if not math.isfinite(u):
            return None
        psi = math.atan2(d[1], d[0])
        return (self.rim_px + u * self.rim_px * math.cos(psi),
                self.rim_px + u * self.rim_px * math.sin(psi))

    def pixel_pitch(self, x, y):
        """Angular size (rad) of one pixel at continuous position, largest axis."""
        u = math.hypot(x - self.rim_px, y - self.rim_px) / self.rim_px
        du = 1.0 / self.rim_px
        phi = np.interp([max(u - du, 0.0), min(u + du, 1.0)], self._table_u,
                        self._table_phi)
        radial = (phi[1] - phi[0]) / (min(u + du, 1.0) - max(u - du, 0.0)) * du
        centre = float(np.interp(u, self._table_u, self._table_phi))
        tangential = math.sin(centre) * du / max(u, du)
        return max(radial, tangential)

    def plane_points(self, height, subset=None):
        """Ground-frame (x, y) where each ray crosses the plane ``z = height``.

        Rays that are invalid or never reach the plane get NaN.
        """
        dirs = self.directions if subset is None else self.directions[subset]
        hits = self.hits if subset is None else self.hits[subset]
        valid = self.valid if subset is None else self.valid[subset]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (height - hits[:, 2]) / dirs[:, 2]
        ok = valid & (dirs[:, 2] > 0)
        px = np.where(ok, hits[:, 0] + s * dirs[:, 0], np.nan)
        py = np.where(ok, hits[:, 1] + s * dirs[:, 1], np.nan)
        return px, py, ok

    def subsample_ids(self, flat_pixels):
        """Flat subsample ids for a set of flat pixel ids."""
        k = self.supersample ** 2
        flat_pixels = np.asarray(flat_pixels, dtype=np.int64)
        return (flat_pixels[:, None] * k + np.arange(k)[None, :]).ravel()


_CAMERA_CACHE: dict = {}


def camera_for(profile, config, resolution=256, supersample=1):
    """Memoised camera construction (ray tables are pure functions of inputs)."""
    key = (id(profile), profile.kind, len(profile), float(profile.rim_radius), config,
           int(resolution), int(supersample))
    cam = _CAMERA_CACHE.get(key)
    if cam is None or cam.profile is not profile:
        cam = CatadioptricCamera(profile, config, resolution, supersample)
        _CAMERA_CACHE[key] = cam
    return cam
