"""Exposure bracketing and fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = 2.2


@dataclass
class BracketStack:
    stops: tuple
    ldr: list
    fused: np.ndarray


def expose(hdr, ev, gamma=GAMMA):
    """One low-dynamic-range capture in [0, 1] (display encoded)."""
    lin = np.clip(np.asarray(hdr, dtype=np.float64) * 2.0 ** ev, 0.0, 1.0)
    return lin ** (1.0 / gamma)


def bracket_exposures(hdr, stops, gamma=GAMMA, saturation=1.0) -> BracketStack:
    """Capture ``hdr`` at each EV in ``stops`` and fuse back to radiance.

    Each fused pixel inverts the shortest exposure that is not saturated in
    that pixel (any channel); if every exposure saturates, the shortest one
    is used. Linear values ``< saturation`` count as unsaturated.
    """
    stops = tuple(float(s) for s in stops)
    if not stops:
        raise ValueError("stops must not be empty")
    hdr = np.asarray(hdr, dtype=np.float64)
    if not np.all(np.isfinite(hdr)):
        raise ValueError("hdr must be finite")
    ldr = [expose(hdr, ev, gamma) for ev in stops]
    order = np.argsort(stops)[::-1]  # longest first; shorter ones overwrite
    shortest = int(order[-1])
    fused = ldr[shortest] ** gamma / 2.0 ** stops[shortest]
    for k in order:
        lin = ldr[k] ** gamma
        sat = lin >= saturation
        if lin.ndim == 3:
            sat = sat.any(axis=-1, keepdims=True)
        fused = np.where(sat, fused, lin / 2.0 ** stops[k])
    return BracketStack(stops, ldr, fused)


def shortest_exposure(stack: BracketStack) -> np.ndarray:
    return stack.ldr[int(np.argmin(stack.stops))]
