"""Sun path over the imaging window and the clear-sky irradiance model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DAY_START_H = 8.0
DAY_END_H = 17.0


@dataclass(frozen=True)
class SunEphemeris:
    """Sinusoidal sun arc.

    Time ``t`` is seconds since the start of the imaging window (08:00).
    Elevation follows ``max_elevation * sin(pi * (clock - sunrise) / day_length)``;
    azimuth sweeps from east (+x) through south (-y) to west (-x).
    """

    max_elevation: float = 60.0
    day_length_h: float = 12.0
    noon_h: float = 12.5
    azimuth_sweep: float = 1.0
    angular_radius: float = 0.27
    peak_ghi: float = 1000.0
    diffuse_fraction: float = 0.2
    start_h: float = DAY_START_H
    end_h: float = DAY_END_H

    def __post_init__(self):
        if not (0.0 < self.max_elevation <= 90.0):
            raise ValueError("max_elevation must be in (0, 90]")
        rise = self.noon_h - self.day_length_h / 2
        sets = self.noon_h + self.day_length_h / 2
        if rise > self.start_h or sets < self.end_h:
            raise ValueError("sun must be up for the whole imaging window")
        if not (0.0 <= self.diffuse_fraction <= 1.0):
            raise ValueError("diffuse_fraction must lie in [0, 1]")

    @property
    def duration(self) -> float:
        return (self.end_h - self.start_h) * 3600.0

    def _phase(self, t):
        clock = self.start_h + np.asarray(t, dtype=np.float64) / 3600.0
        return (clock - self.noon_h) / (self.day_length_h / 2.0)

    def elevation(self, t):
        """Elevation in radians."""
        x = self._phase(t)
        return math.radians(self.max_elevation) * np.sin(0.5 * np.pi * (x + 1.0))

    def azimuth(self, t):
        """Azimuth in radians from +x (east), counter-clockwise."""
        return -0.5 * np.pi - 0.5 * np.pi * self.azimuth_sweep * self._phase(t)

    def direction(self, t):
        """Unit vector toward the sun (x east, y north, z up)."""
        e = self.elevation(t)
        a = self.azimuth(t)
        return np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1)

    def zenith_angle(self, t):
        return 0.5 * np.pi - self.elevation(t)

    def clear_ghi(self, t):
        return self.peak_ghi * np.maximum(np.sin(self.elevation(t)), 0.0)
