"""Pure numpy implementations of the hot loops.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same floating point evaluation order, so the two paths agree to the
last few ulps (hashes agree bit for bit).
"""

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_KX = np.uint64(0x9E3779B97F4A7C15)
_KY = np.uint64(0xC2B2AE3D27D4EB4F)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def _mix64(k):
    k = (k ^ (k >> _S30)) * _M1
    k = (k ^ (k >> _S27)) * _M2
    return k ^ (k >> _S31)


def octave_key(seed, octave):
    """64-bit key for one (seed, octave) lattice."""
    with np.errstate(over="ignore"):
        k = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _KX + np.uint64(octave + 1)
        return int(_mix64(np.asarray(k, dtype=np.uint64)))


def _lattice(ix, iy, key):
    with np.errstate(over="ignore"):
        k = (ix.view(np.uint64) * _KX) ^ (iy.view(np.uint64) * _KY) ^ np.uint64(key)
        h = _mix64(k)
    return (h >> _S11).astype(np.float64) * _INV53


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def value_noise(x, y, key):
    xf0 = np.floor(x)
    yf0 = np.floor(y)
    ix = xf0.astype(np.int64)
    iy = yf0.astype(np.int64)
    u = _fade(x - xf0)
    v = _fade(y - yf0)
    one = np.int64(1)
    v00 = _lattice(ix, iy, key)
    v10 = _lattice(ix + one, iy, key)
    v01 = _lattice(ix, iy + one, key)
    v11 = _lattice(ix + one, iy + one, key)
    a = v00 + u * (v10 - v00)
    b = v01 + u * (v11 - v01)
    return a + v * (b - a)


def fbm(x, y, seed, octaves, lacunarity, gain):
    """Fractal sum of value noise, normalised to [0, 1].

    ``x`` and ``y`` are in units of the coarsest lattice spacing.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    total = np.zeros(x.shape)
    amp = 1.0
    freq = 1.0
    norm = 0.0
    for o in range(octaves):
        key = octave_key(seed, o)
        total += amp * value_noise(x * freq, y * freq, key)
        norm += amp
        amp *= gain
        freq *= lacunarity
    return total / norm


def _hermite(rho, z, m, x):
    k = np.clip(np.searchsorted(rho, x, side="right") - 1, 0, len(rho) - 2)
    x0 = rho[k]
    h = rho[k + 1] - x0
    t = (x - x0) / h
    t2 = t * t
    t3 = t2 * t
    z0 = z[k]
    z1 = z[k + 1]
    m0 = m[k]
    m1 = m[k + 1]
    f = ((2.0 * t3 - 3.0 * t2 + 1.0) * z0 + (t3 - 2.0 * t2 + t) * h * m0
         + (-2.0 * t3 + 3.0 * t2) * z1 + (t3 - t2) * h * m1)
    df = ((6.0 * t2 - 6.0 * t) * (z0 - z1) / h + (3.0 * t2 - 4.0 * t + 1.0) * m0
          + (3.0 * t2 - 2.0 * t) * m1)
    return f, df


def hermite_eval(rho, z, m, x):
    """Cubic Hermite interpolant of a sampled profile and its derivative."""
    x = np.asarray(x, dtype=np.float64)
    return _hermite(np.asarray(rho, np.float64), np.asarray(z, np.float64),
                    np.asarray(m, np.float64), x)


def trace_rays(rho, z, m, tan_alpha, iters=64):
    """Intersect pinhole rays with a profile of revolution and reflect them.

    Rays leave the pinhole at the origin heading down at angle ``alpha`` from
    the optical axis. Returns ``(hit_rho, hit_z, out_rho, out_z, valid)``
    with ``(out_rho, out_z)`` the unit reflected direction in the meridional
    plane. ``valid`` is False where the ray passes outside the last sample.
    """
    rho = np.asarray(rho, np.float64)
    z = np.asarray(z, np.float64)
    m = np.asarray(m, np.float64)
    ta = np.asarray(tan_alpha, np.float64).ravel()
    n = ta.size
    rim = rho[-1]
    with np.errstate(over="ignore"):     # subnormal tan: cot = inf, as in C
        cot = np.where(ta > 0.0, 1.0 / np.where(ta > 0.0, ta, 1.0), 0.0)
    axial = ta <= 0.0

    g_rim = _hermite(rho, z, m, np.full(n, rim))[0] + rim * cot
    valid = axial | (g_rim >= 0.0)

    lo = np.zeros(n)
    hi = np.full(n, rim)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g = _hermite(rho, z, m, mid)[0] + mid * cot
        below = g < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    hit_rho = np.where(axial, 0.0, 0.5 * (lo + hi))
    hit_z, slope = _hermite(rho, z, m, hit_rho)

    inv = 1.0 / np.sqrt(1.0 + ta * ta)
    di_r = ta * inv
    di_z = -inv
    nn = 1.0 / np.sqrt(1.0 + slope * slope)
    n_r = -slope * nn
    n_z = nn
    dot = di_r * n_r + di_z * n_z
    out_r = di_r - 2.0 * dot * n_r
    out_z = di_z - 2.0 * dot * n_z
    return hit_rho, hit_z, out_r, out_z, valid


def shear_stats(red, blue, valid, anchor, tan_thetas, tau_max, horizon, half_len,
                min_count):
    """Per-theta mean column standard deviation of the warped ratio window.

    ``red``/``blue``/``valid`` are (2L+1, F) space-time planes with row ``L``
    at the sun. Returns one score per theta (NaN when no column qualifies).
    """
    t = np.arange(anchor - tau_max, anchor + 1)
    c = np.arange(anchor - tau_max, anchor + horizon + 1)
    lag = (c[None, :] - t[:, None]).astype(np.float64)
    scores = np.full(len(tan_thetas), np.nan)
    for i, tan_theta in enumerate(tan_thetas):
        ratio, ok = _warp_ratio(red, blue, valid, t, lag, tan_theta, half_len)
        cnt = ok.sum(axis=0)
        use = cnt >= min_count
        if use.any():
            mean = np.where(ok, ratio, 0.0).sum(axis=0) / np.maximum(cnt, 1)
            dev = np.where(ok, ratio - mean[None, :], 0.0)
            var = (dev * dev).sum(axis=0) / np.maximum(cnt, 1)
            scores[i] = np.sqrt(var[use]).mean()
    return scores


def _warp_ratio(red, blue, valid, t, lag, tan_theta, half_len):
    nrow, nfr = red.shape
    off = lag * tan_theta
    pos = half_len + off
    ok = (lag >= 0.0) & (off <= half_len) & (t[:, None] >= 0) & (t[:, None] < nfr)
    i0 = np.floor(np.where(ok, pos, 0.0)).astype(np.int64)
    frac = np.where(ok, pos, 0.0) - i0
    i1 = np.minimum(i0 + 1, nrow - 1)
    tt = np.broadcast_to(np.clip(t, 0, nfr - 1)[:, None], lag.shape)
    ok &= valid[i0, tt] & ((frac == 0.0) | valid[i1, tt])
    r = (1.0 - frac) * red[i0, tt] + frac * red[i1, tt]
    b = (1.0 - frac) * blue[i0, tt] + frac * blue[i1, tt]
    s = b + r
    ratio = np.where(s > 0.0, (b - r) / np.where(s > 0.0, s, 1.0), 0.0)
    return ratio, ok
