"""Procedural cloud layer: fractal value noise advected by a constant wind."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _kernels

_REGIME_SALT = 0x5DEECE66D


@dataclass(frozen=True)
class CloudField:
    """A single thin cloud layer at height ``height`` (m).

    ``coverage_threshold`` and ``softness`` remap the [0, 1] noise value
    ``n`` to opacity: 0 below the threshold, 1 above ``threshold + softness``
    and a smoothstep in between (a hard step when softness is 0).

    With ``regime_amplitude > 0`` the threshold itself drifts by up to
    ``+-regime_amplitude`` over a much coarser lattice (``regime_scale``),
    giving alternating clearer and cloudier spells as the field advects.
    """

    seed: int = 0
    octaves: int = 4
    base_scale: float = 2500.0
    gain: float = 0.5
    lacunarity: float = 2.0
    coverage_threshold: float = 0.55
    softness: float = 0.08
    wind: tuple = (15.0, 0.0)
    height: float = 1500.0
    regime_scale: float = 20000.0
    regime_amplitude: float = 0.0

    def __post_init__(self):
        if self.octaves < 1 or self.base_scale <= 0 or self.regime_scale <= 0:
            raise ValueError("octaves must be >= 1 and base_scale, regime_scale > 0")
        if not (0.0 <= self.coverage_threshold <= 1.0 and 0.0 <= self.softness <= 1.0):
            raise ValueError("coverage_threshold and softness must lie in [0, 1]")

    @property
    def wind_speed(self) -> float:
        return float(np.hypot(*self.wind))

    @property
    def wind_direction(self) -> float:
        """Direction the clouds move toward, radians from +x."""
        return float(np.arctan2(self.wind[1], self.wind[0]))

    def density(self, x, y):
        """Raw fractal noise at ground-frame position, before thresholding."""
        x, y = np.broadcast_arrays(np.asarray(x, np.float64), np.asarray(y, np.float64))
        return _kernels.fbm(x / self.base_scale, y / self.base_scale, self.seed,
                            self.octaves, self.lacunarity, self.gain).reshape(x.shape)

    def threshold(self, x, y):
        """Local coverage threshold (constant unless a regime amplitude is set)."""
        if self.regime_amplitude == 0.0:
            return self.coverage_threshold
        x, y = np.broadcast_arrays(np.asarray(x, np.float64), np.asarray(y, np.float64))
        r = _kernels.fbm(x / self.regime_scale, y / self.regime_scale,
                         self.seed ^ _REGIME_SALT, 2, 2.0, 0.5).reshape(x.shape)
        return self.coverage_threshold + self.regime_amplitude * (2.0 * r - 1.0)

    def opacity(self, x, y, t=0.0):
        return sample_opacity(self, x, y, t)


def coverage_remap(n, threshold, softness):
    n = np.asarray(n, dtype=np.float64)
    if softness <= 0.0:
        return (n > threshold).astype(np.float64)
    with np.errstate(over="ignore"):       # tiny softness: +-inf clips to a step
        s = np.clip((n - threshold) / softness, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def sample_opacity(field: CloudField, x, y, t=0.0):
    """Opacity in [0, 1]; the pattern translates rigidly with the wind."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xs = x - field.wind[0] * t
    ys = y - field.wind[1] * t
    out = coverage_remap(field.density(xs, ys), field.threshold(xs, ys), field.softness)
    return out if out.ndim else float(out)
