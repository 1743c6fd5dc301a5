"""Reference forecasters."""

import numpy as np


def persistence(g_t, horizon):
    """Future irradiance equals the latest value: ``[g_t] * horizon``."""
    g = float(g_t)
    if not np.isfinite(g):
        raise ValueError("G_T must be finite")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return np.full(int(horizon), g)
