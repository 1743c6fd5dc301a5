# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the loops in ``_pykernels``.

Same signatures, same arithmetic order. Selected at import by
``skylens._kernels`` when the extension is built.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, NAN
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t _M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t _M2 = 0x94D049BB133111EBULL
cdef uint64_t _KX = 0x9E3779B97F4A7C15ULL
cdef uint64_t _KY = 0xC2B2AE3D27D4EB4FULL
cdef double _INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix64(uint64_t k) nogil:
    k = (k ^ (k >> 30)) * _M1
    k = (k ^ (k >> 27)) * _M2
    return k ^ (k >> 31)


def octave_key(seed, octave):
    cdef uint64_t k = (<uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)) * _KX + <uint64_t>(octave + 1)
    return int(_mix64(k))


cdef inline double _lattice(int64_t ix, int64_t iy, uint64_t key) nogil:
    cdef uint64_t k = ((<uint64_t>ix) * _KX) ^ ((<uint64_t>iy) * _KY) ^ key
    return <double>(_mix64(k) >> 11) * _INV53


cdef inline double _fade(double t) nogil:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


cdef inline double _noise(double x, double y, uint64_t key) nogil:
    cdef double xf0 = floor(x)
    cdef double yf0 = floor(y)
    cdef int64_t ix = <int64_t>xf0
    cdef int64_t iy = <int64_t>yf0
    cdef double u = _fade(x - xf0)
    cdef double v = _fade(y - yf0)
    cdef double v00 = _lattice(ix, iy, key)
    cdef double v10 = _lattice(ix + 1, iy, key)
    cdef double v01 = _lattice(ix, iy + 1, key)
    cdef double v11 = _lattice(ix + 1, iy + 1, key)
    cdef double a = v00 + u * (v10 - v00)
    cdef double b = v01 + u * (v11 - v01)
    return a + v * (b - a)


def value_noise(x, y, key):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    ya = np.ascontiguousarray(y, dtype=np.float64)
    out = np.empty(xa.shape)
    cdef double[::1] xv = xa.reshape(-1)
    cdef double[::1] yv = ya.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef uint64_t k = key
    cdef Py_ssize_t i, n = xv.shape[0]
    with nogil:
        for i in range(n):
            ov[i] = _noise(xv[i], yv[i], k)
    return out


def fbm(x, y, seed, int octaves, double lacunarity, double gain):
    xa = np.ascontiguousarray(x, dtype=np.float64)
    ya = np.ascontiguousarray(y, dtype=np.float64)
    out = np.zeros(xa.shape)
    cdef double[::1] xv = xa.reshape(-1)
    cdef double[::1] yv = ya.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef int o
    cdef uint64_t key
    cdef double amp = 1.0, freq = 1.0, norm = 0.0
    for o in range(octaves):
        key = <uint64_t>octave_key(seed, o)
        with nogil:
            for i in range(n):
                ov[i] += amp * _noise(xv[i] * freq, yv[i] * freq, key)
        norm += amp
        amp *= gain
        freq *= lacunarity
    with nogil:
        for i in range(n):
            ov[i] = ov[i] / norm
    return out


cdef inline Py_ssize_t _interval(const double[::1] rho, double x) nogil:
    # index k with rho[k] <= x < rho[k+1], clamped to [0, n-2]
    cdef Py_ssize_t lo = 0, hi = rho.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if rho[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    lo -= 1
    if lo < 0:
        lo = 0
    if lo > rho.shape[0] - 2:
        lo = rho.shape[0] - 2
    return lo


cdef inline void _hermite1(const double[::1] rho, const double[::1] z, const double[::1] m,
                           double x, double* f, double* df) nogil:
    cdef Py_ssize_t k = _interval(rho, x)
    cdef double x0 = rho[k]
    cdef double h = rho[k + 1] - x0
    cdef double t = (x - x0) / h
    cdef double t2 = t * t
    cdef double t3 = t2 * t
    cdef double z0 = z[k], z1 = z[k + 1], m0 = m[k], m1 = m[k + 1]
    f[0] = ((2.0 * t3 - 3.0 * t2 + 1.0) * z0 + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * z1 + (t3 - t2) * h * m1)
    df[0] = ((6.0 * t2 - 6.0 * t) * (z0 - z1) / h + (3.0 * t2 - 4.0 * t + 1.0) * m0
             + (3.0 * t2 - 2.0 * t) * m1)


def hermite_eval(rho, z, m, x):
    cdef const double[::1] rv = np.ascontiguousarray(rho, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[::1] mv = np.ascontiguousarray(m, dtype=np.float64)
    xa = np.ascontiguousarray(x, dtype=np.float64)
    f = np.empty(xa.shape)
    df = np.empty(xa.shape)
    cdef const double[::1] xv = xa.reshape(-1)
    cdef double[::1] fv = f.reshape(-1)
    cdef double[::1] dv = df.reshape(-1)
    cdef Py_ssize_t i
    with nogil:
        for i in range(xv.shape[0]):
            _hermite1(rv, zv, mv, xv[i], &fv[i], &dv[i])
    return f, df


def trace_rays(rho, z, m, tan_alpha, int iters=64):
    cdef const double[::1] rv = np.ascontiguousarray(rho, dtype=np.float64)
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[::1] mv = np.ascontiguousarray(m, dtype=np.float64)
    cdef const double[::1] ta = np.ascontiguousarray(tan_alpha, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t n = ta.shape[0], i
    hit_rho = np.empty(n)
    hit_z = np.empty(n)
    out_r = np.empty(n)
    out_z = np.empty(n)
    valid = np.empty(n, dtype=np.bool_)
    cdef double[::1] hr = hit_rho, hz = hit_z, orv = out_r, ozv = out_z
    cdef cnp.npy_bool[::1] vv = valid
    cdef double rim = rv[rv.shape[0] - 1]
    cdef double cot, lo, hi, mid, g, f, df, slope, inv, di_r, di_z, nn, n_r, n_z, dot, hrho
    cdef int it
    with nogil:
        for i in range(n):
            if ta[i] > 0.0:
                cot = 1.0 / ta[i]
                _hermite1(rv, zv, mv, rim, &f, &df)
                vv[i] = (f + rim * cot) >= 0.0
                lo = 0.0
                hi = rim
                for it in range(iters):
                    mid = 0.5 * (lo + hi)
                    _hermite1(rv, zv, mv, mid, &f, &df)
                    g = f + mid * cot
                    if g < 0.0:
                        lo = mid
                    else:
                        hi = mid
                hrho = 0.5 * (lo + hi)
            else:
                vv[i] = True
                hrho = 0.0
            _hermite1(rv, zv, mv, hrho, &f, &slope)
            hr[i] = hrho
            hz[i] = f
            inv = 1.0 / sqrt(1.0 + ta[i] * ta[i])
            di_r = ta[i] * inv
            di_z = -inv
            nn = 1.0 / sqrt(1.0 + slope * slope)
            n_r = -slope * nn
            n_z = nn
            dot = di_r * n_r + di_z * n_z
            orv[i] = di_r - 2.0 * dot * n_r
            ozv[i] = di_z - 2.0 * dot * n_z
    return hit_rho, hit_z, out_r, out_z, valid


def shear_stats(red, blue, valid, Py_ssize_t anchor, tan_thetas, Py_ssize_t tau_max,
                Py_ssize_t horizon, Py_ssize_t half_len, Py_ssize_t min_count):
    cdef const double[:, ::1] R = np.ascontiguousarray(red, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(blue, dtype=np.float64)
    cdef const cnp.npy_bool[:, ::1] V = np.ascontiguousarray(valid, dtype=np.bool_)
    cdef const double[::1] tth = np.ascontiguousarray(tan_thetas, dtype=np.float64)
    cdef Py_ssize_t nrow = R.shape[0], nfr = R.shape[1]
    cdef Py_ssize_t ncol = tau_max + horizon + 1
    scores = np.full(tth.shape[0], np.nan)
    cdef double[::1] sc = scores
    cnt_a = np.zeros(ncol, dtype=np.int64)
    sum_a = np.zeros(ncol)
    sq_a = np.zeros(ncol)
    cdef int64_t[::1] cnt = cnt_a
    cdef double[::1] s1 = sum_a
    cdef double[::1] s2 = sq_a
    cdef Py_ssize_t k, j, ti, t, c, i0, i1, used
    cdef double tan_theta, off, pos, frac, r, b, s, ratio, mean, total, d
    for k in range(tth.shape[0]):
        tan_theta = tth[k]
        with nogil:
            for j in range(ncol):
                cnt[j] = 0
                s1[j] = 0.0
                s2[j] = 0.0
            # pass 1: means
            for ti in range(tau_max + 1):
                t = anchor - tau_max + ti
                if t < 0 or t >= nfr:
                    continue
                for j in range(ti, ncol):
                    c = anchor - tau_max + j
                    off = <double>(c - t) * tan_theta
                    if off > half_len:
                        break
                    pos = half_len + off
                    i0 = <Py_ssize_t>floor(pos)
                    frac = pos - i0
                    i1 = i0 + 1 if i0 + 1 < nrow else nrow - 1
                    if not V[i0, t]:
                        continue
                    if frac != 0.0 and not V[i1, t]:
                        continue
                    r = (1.0 - frac) * R[i0, t] + frac * R[i1, t]
                    b = (1.0 - frac) * B[i0, t] + frac * B[i1, t]
                    s = b + r
                    ratio = (b - r) / s if s > 0.0 else 0.0
                    cnt[j] += 1
                    s1[j] += ratio
            for j in range(ncol):
                if cnt[j] > 0:
                    s1[j] = s1[j] / cnt[j]
            # pass 2: squared deviations
            for ti in range(tau_max + 1):
                t = anchor - tau_max + ti
                if t < 0 or t >= nfr:
                    continue
                for j in range(ti, ncol):
                    c = anchor - tau_max + j
                    off = <double>(c - t) * tan_theta
                    if off > half_len:
                        break
                    pos = half_len + off
                    i0 = <Py_ssize_t>floor(pos)
                    frac = pos - i0
                    i1 = i0 + 1 if i0 + 1 < nrow else nrow - 1
                    if not V[i0, t]:
                        continue
                    if frac != 0.0 and not V[i1, t]:
                        continue
                    r = (1.0 - frac) * R[i0, t] + frac * R[i1, t]
                    b = (1.0 - frac) * B[i0, t] + frac * B[i1, t]
                    s = b + r
                    ratio = (b - r) / s if s > 0.0 else 0.0
                    d = ratio - s1[j]
                    s2[j] += d * d
            total = 0.0
            used = 0
            for j in range(ncol):
                if cnt[j] >= min_count:
                    total += sqrt(s2[j] / cnt[j])
                    used += 1
            if used > 0:
                sc[k] = total / used
    return scores
