"""In-memory simulated days: space-time images rendered only where slices read.

Rendering a full 28-day set to disk costs tens of gigabytes; the experiment
only ever reads the pixels under each frame's slice, so those are rendered
directly. Every value equals the corresponding pixel of a full render.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import mirror as _mirror
from ..skysim.camera import camera_for
from ..skysim.dataset import DayConfig, day_timestamps, mirror_profile
from ..skysim.render import ground_truth, render_pixels
from ..spacetime import SpaceTimeImage, extract_slice, slice_pixels

SLICE_HALF_LEN = 160


@dataclass
class SimDay:
    index: int
    mirror: str
    spacetime: SpaceTimeImage
    occluded: np.ndarray
    ghi: np.ndarray
    day: DayConfig | None = None

    @property
    def timestamps(self):
        return self.spacetime.timestamps


def wind_image_deg(day: DayConfig) -> float:
    """Image-plane wind angle (image offsets follow world horizontal directions)."""
    return math.degrees(day.clouds.wind_direction) % 360.0


def simulate_spacetime(day: DayConfig, mirror: str,
                       config: _mirror.OpticalConfig = _mirror.OpticalConfig(),
                       resolution: int = 256, half_len: int = SLICE_HALF_LEN, band: int = 1,
                       t0: float = 30.0, wind_deg: float | None = None) -> SimDay:
    cam = camera_for(mirror_profile(mirror, config), config, resolution)
    scene = day.scene
    times = day_timestamps(day.sun, t0)
    wind = wind_image_deg(day) if wind_deg is None else wind_deg
    slice_deg = (wind + 180.0) % 360.0
    n = cam.resolution
    L = half_len
    data = np.zeros((2 * L + 1, len(times), 3))
    valid = np.zeros((2 * L + 1, len(times)), bool)
    suns = np.full((len(times), 2), np.nan)
    occ = np.zeros(len(times), bool)
    ghi = np.zeros(len(times))
    img = np.zeros((n * n, 3))
    vmask = np.zeros(n * n, bool)
    for f, t in enumerate(times):
        occ[f], ghi[f], _ = ground_truth(scene, float(t))
        sp = cam.project(day.sun.direction(float(t)))
        if sp is None:
            continue
        ids = slice_pixels(sp, slice_deg, L, band, (n, n))
        rad, ok = render_pixels(cam, scene, float(t), ids)
        img[ids] = rad
        vmask[ids] = ok
        v, good = extract_slice(img.reshape(n, n, 3), sp, slice_deg, L, band,
                                vmask.reshape(n, n))
        img[ids] = 0.0
        vmask[ids] = False
        data[:, f] = v
        valid[:, f] = good
        suns[f] = sp
    st = SpaceTimeImage(data, valid, L, band, wind, t0, times, suns)
    return SimDay(day.index, mirror, st, occ, ghi, day)
