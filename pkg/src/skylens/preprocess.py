"""Sun localisation, sun-track fitting, optical flow and wind estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy import ndimage

from . import io as _io


class TrackNotIdentifiable(RuntimeError):
    pass


class WindNotEstimable(RuntimeError):
    pass


# --------------------------------------------------------------------- sun

def detect_sun(raster, saturation_level=0.99, min_blob_px=1):
    """Centroid ``(x, y)`` of the largest saturated blob, or None.

    A pixel is saturated when any channel is ``>= saturation_level``. Blobs
    are 4-connected; ties on area go to the lowest label (raster order).
    """
    img = np.asarray(raster, dtype=np.float64)
    sat = img >= saturation_level
    if sat.ndim == 3:
        sat = sat.any(axis=-1)
    lab, n = ndimage.label(sat)
    if n == 0:
        return None
    areas = np.bincount(lab.ravel())[1:]
    k = int(np.argmax(areas))
    if areas[k] < min_blob_px:
        return None
    rows, cols = np.nonzero(lab == k + 1)
    return (float(cols.mean() + 0.5), float(rows.mean() + 0.5))


@dataclass
class SunTrack:
    coef_x: np.ndarray
    coef_y: np.ndarray
    t_center: float
    t_scale: float
    inliers: np.ndarray
    window: tuple
    inlier_fraction: float
    degenerate: bool = False
    rms: float = 0.0
    image_shape: tuple | None = None

    @property
    def degree(self) -> int:
        return len(self.coef_x) - 1

    def _s(self, t):
        return (np.asarray(t, dtype=np.float64) - self.t_center) / self.t_scale

    def covers(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return (t >= self.window[0]) & (t <= self.window[1])

    def evaluate(self, t):
        s = self._s(t)
        x = np.polynomial.polynomial.polyval(s, self.coef_x)
        y = np.polynomial.polynomial.polyval(s, self.coef_y)
        if self.image_shape is not None:
            h, w = self.image_shape
            x = np.clip(x, 0.0, w - 1e-9)
            y = np.clip(y, 0.0, h - 1e-9)
        return x, y

    def to_rows(self):
        rows = [["coef_x", i, _io.fmt(c)] for i, c in enumerate(self.coef_x)]
        rows += [["coef_y", i, _io.fmt(c)] for i, c in enumerate(self.coef_y)]
        rows += [["t_center", 0, _io.fmt(self.t_center)], ["t_scale", 0, _io.fmt(self.t_scale)],
                 ["window", 0, _io.fmt(self.window[0])], ["window", 1, _io.fmt(self.window[1])],
                 ["inlier_fraction", 0, _io.fmt(self.inlier_fraction)],
                 ["degenerate", 0, int(self.degenerate)], ["rms", 0, _io.fmt(self.rms)]]
        if self.image_shape is not None:
            rows += [["image_shape", 0, self.image_shape[0]], ["image_shape", 1, self.image_shape[1]]]
        rows += [["inlier_t", i, _io.fmt(t)] for i, t in enumerate(self.inliers)]
        return rows

    def write_csv(self, path):
        _io.write_csv(path, ["field", "index", "value"], self.to_rows())

    @classmethod
    def read_csv(cls, path):
        _, rows = _io.read_csv(path)
        d: dict = {}
        for name, idx, val in rows:
            d.setdefault(name, {})[int(idx)] = val
        seq = lambda k: [float(d[k][i]) for i in sorted(d.get(k, {}))]
        shape = tuple(int(v) for v in (d["image_shape"][i] for i in sorted(d["image_shape"]))) \
            if "image_shape" in d else None
        return cls(np.array(seq("coef_x")), np.array(seq("coef_y")), seq("t_center")[0],
                   seq("t_scale")[0], np.array(seq("inlier_t")), tuple(seq("window")),
                   seq("inlier_fraction")[0], bool(int(float(d["degenerate"][0]))),
                   seq("rms")[0], shape)


def _polyfit(s, v, degree):
    V = np.vander(s, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, v, rcond=None)
    return coef


def fit_sun_track(detections, degree=2, iters=500, inlier_tol_px=3.0, min_inliers=0.5,
                  seed=0, image_shape=None) -> SunTrack:
    """RANSAC polynomial track ``x(t), y(t)`` with a least-squares refit.

    ``detections`` is an (n, 3) array-like of ``(t, x, y)``. Detections are
    sorted first so the result does not depend on their order. ``min_inliers``
    is a fraction of the detections when < 1, else an absolute count.
    """
    det = np.asarray(detections, dtype=np.float64).reshape(-1, 3)
    det = det[np.lexsort((det[:, 2], det[:, 1], det[:, 0]))]
    n = len(det)
    if n < degree + 1:
        raise ValueError(f"need >= {degree + 1} detections, got {n}")
    t, x, y = det.T
    t_center = 0.5 * (t.min() + t.max())
    t_scale = max(0.5 * (t.max() - t.min()), 1.0)
    s = (t - t_center) / t_scale
    V = np.vander(s, degree + 1, increasing=True)
    rank = np.linalg.matrix_rank(V)
    need = min_inliers * n if min_inliers < 1 else min_inliers
    if rank < degree + 1 or n == degree + 1:
        # exactly determined or rank deficient: no redundancy to reject outliers
        cx, cy = _polyfit(s, x, degree), _polyfit(s, y, degree)
        return SunTrack(cx, cy, t_center, t_scale, t.copy(), (t.min(), t.max()), 1.0,
                        True, 0.0, image_shape)

    rng = np.random.default_rng(seed)
    best = None
    best_count = -1
    best_err = np.inf
    for _ in range(iters):
        idx = rng.choice(n, degree + 1, replace=False)
        if np.linalg.matrix_rank(V[idx]) < degree + 1:
            continue
        cx = np.linalg.solve(V[idx], x[idx])
        cy = np.linalg.solve(V[idx], y[idx])
        r = np.hypot(V @ cx - x, V @ cy - y)
        inl = r <= inlier_tol_px
        cnt = int(inl.sum())
        err = float(np.sum(np.minimum(r, inlier_tol_px) ** 2))
        if cnt > best_count or (cnt == best_count and err < best_err):
            best, best_count, best_err = inl, cnt, err
    if best is None or best_count < need:
        raise TrackNotIdentifiable(
            f"consensus {max(best_count, 0)}/{n} below minimum {need:g}; "
            "manual identification required")
    # refit, then one re-selection pass on the refined model
    for _ in range(2):
        cx = _polyfit(s[best], x[best], degree)
        cy = _polyfit(s[best], y[best], degree)
        r = np.hypot(V @ cx - x, V @ cy - y)
        best = r <= inlier_tol_px
    cx = _polyfit(s[best], x[best], degree)
    cy = _polyfit(s[best], y[best], degree)
    r = np.hypot(V @ cx - x, V @ cy - y)[best]
    return SunTrack(cx, cy, t_center, t_scale, t[best], (t.min(), t.max()),
                    float(best.mean()), False, float(np.sqrt(np.mean(r * r))), image_shape)


# -------------------------------------------------------------------- flow

@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    converged: bool = True

    @property
    def magnitude(self):
        return np.hypot(self.u, self.v)

    def mean(self):
        if not self.valid.any():
            return (0.0, 0.0)
        return (float(self.u[self.valid].mean()), float(self.v[self.valid].mean()))


def _gray(img):
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def _laplacian(h, w):
    def path(m):
        if m == 1:
            return sp.csr_matrix((1, 1))
        d = np.ones(m)
        main = 2.0 * d
        main[0] = main[-1] = 1.0
        return sp.diags([-d[:-1], main, -d[:-1]], [-1, 0, 1], format="csr")
    return (sp.kron(sp.identity(h), path(w)) + sp.kron(path(h), sp.identity(w))).tocsr()


def _downsample(img):
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _downsample_mask(mask):
    h, w = mask.shape
    m = mask[: h - h % 2, : w - w % 2]
    return m[0::2, 0::2] | m[1::2, 0::2] | m[0::2, 1::2] | m[1::2, 1::2]


def _upsample_flow(f, shape):
    up = np.repeat(np.repeat(f, 2, axis=0), 2, axis=1) * 2.0
    out = np.zeros(shape)
    hh, ww = min(shape[0], up.shape[0]), min(shape[1], up.shape[1])
    out[:hh, :ww] = up[:hh, :ww]
    if shape[0] > hh:
        out[hh:, :] = out[hh - 1: hh, :]
    if shape[1] > ww:
        out[:, ww:] = out[:, ww - 1: ww]
    return out


def _warp(img, u, v):
    h, w = img.shape
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(img, [rr + v, cc + u], order=1, mode="nearest")


def _hs_level(a, b, dmask, u, v, lam, warps, tol):
    h, w = a.shape
    L = _laplacian(h, w)
    conv = True
    for _ in range(warps):
        bw = _warp(b, u, v)
        avg = 0.5 * (a + bw)
        iy, ix = np.gradient(avg)
        it = bw - a
        wgt = (~dmask).astype(np.float64)
        ix, iy, it = ix * wgt, iy * wgt, it * wgt
        uf, vf = u.ravel(), v.ravel()
        rhs_c = (ix * u + iy * v - it).ravel()
        A = sp.bmat([[sp.diags((ix * ix).ravel()) + lam * L, sp.diags((ix * iy).ravel())],
                     [sp.diags((ix * iy).ravel()), sp.diags((iy * iy).ravel()) + lam * L]],
                    format="csc")
        A = A + sp.identity(2 * h * w, format="csc") * 1e-10
        rhs = np.concatenate([ix.ravel() * rhs_c, iy.ravel() * rhs_c])
        sol = sla.spsolve(A, rhs)
        if not np.all(np.isfinite(sol)):
            conv = False
            break
        nu, nv = sol[: h * w].reshape(h, w), sol[h * w:].reshape(h, w)
        step = max(np.abs(nu - uf.reshape(h, w)).max(), np.abs(nv - vf.reshape(h, w)).max())
        u, v = nu, nv
        if step < tol:
            break
    else:
        conv = step < 10 * tol
    return u, v, conv


def estimate_flow(frame_a, frame_b, static_mask=None, lam=50.0, pyramid_levels=3,
                  warps=5, tol=1e-3) -> FlowField:
    """Coarse-to-fine Horn-Schunck flow from ``frame_a`` to ``frame_b`` (px/frame).

    Intensities are scaled to [0, 1] by the 99th percentile of the unmasked
    pixels. Masked pixels (``static_mask`` True) are set to a constant, the
    mask is dilated by one pixel so no gradient straddles it, the data term
    ignores them, and their flow is reported as zero.
    """
    a = _gray(frame_a)
    b = _gray(frame_b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if lam <= 0:
        raise ValueError("lam must be > 0")
    mask = np.zeros(a.shape, bool) if static_mask is None else np.asarray(static_mask, bool)
    free = ~mask
    vals = np.concatenate([a[free], b[free]]) if free.any() else np.ones(1)
    scale = float(np.percentile(vals, 99)) or 1.0
    fill = float(np.median(vals)) / scale
    a = np.where(free, np.clip(a / scale, 0.0, 1.0), fill)
    b = np.where(free, np.clip(b / scale, 0.0, 1.0), fill)
    dmask = ndimage.binary_dilation(mask, iterations=1) if mask.any() else mask

    pyr = [(a, b, dmask)]
    for _ in range(pyramid_levels - 1):
        pa, pb, pm = pyr[-1]
        if min(pa.shape) < 16:
            break
        pyr.append((_downsample(pa), _downsample(pb), _downsample_mask(pm)))
    u = np.zeros(pyr[-1][0].shape)
    v = np.zeros_like(u)
    conv = True
    for lvl in range(len(pyr) - 1, -1, -1):
        la, lb, lm = pyr[lvl]
        if u.shape != la.shape:
            u = _upsample_flow(u, la.shape)
            v = _upsample_flow(v, la.shape)
        u, v, ok = _hs_level(la, lb, lm, u, v, lam, warps, tol)
        conv &= ok
    u = np.where(mask, 0.0, u)
    v = np.where(mask, 0.0, v)
    return FlowField(u, v, ~mask & np.isfinite(u) & np.isfinite(v), bool(conv))


# -------------------------------------------------------------------- wind

@dataclass
class WindEstimate:
    direction: float
    speed: float
    confidence: float
    per_frame: np.ndarray = field(default=None, repr=False)

    def write_csv(self, path):
        _io.write_csv(path, ["direction_deg", "speed_px_per_frame", "confidence"],
                      [[_io.fmt(self.direction), _io.fmt(self.speed), _io.fmt(self.confidence)]])

    @classmethod
    def read_csv(cls, path):
        _, rows = _io.read_csv(path)
        d, s, c = (float(v) for v in rows[0])
        return cls(d, s, c)


def frame_wind(flow: FlowField, static_mask=None, noise_floor=0.1):
    """Magnitude-weighted circular mean direction and median speed of one flow.

    Returns ``(ux, uy, speed)`` with ``(ux, uy)`` the unit mean direction,
    or None when nothing moves.
    """
    ok = flow.valid.copy()
    if static_mask is not None:
        ok &= ~np.asarray(static_mask, bool)
    mag = flow.magnitude
    ok &= mag > noise_floor
    if not ok.any():
        return None
    # sum of |f| * (cos a, sin a) is just the sum of the vectors
    sx, sy = float(flow.u[ok].sum()), float(flow.v[ok].sum())
    norm = math.hypot(sx, sy)
    if norm == 0.0:
        return None
    return sx / norm, sy / norm, float(np.median(mag[ok])), norm / float(mag[ok].sum())


def estimate_wind(flows, static_mask=None, median_window=21, noise_floor=0.1) -> WindEstimate:
    """Dominant image-plane cloud motion over the last ``median_window`` flows.

    Direction in degrees, counter-clockwise from +x (columns) toward +y (rows).
    """
    flows = list(flows)
    if not flows:
        raise ValueError("need at least one flow field")
    recent = flows[-median_window:] if median_window else flows
    per = [frame_wind(f, static_mask, noise_floor) for f in recent]
    good = [p for p in per if p is not None]
    if not good:
        raise WindNotEstimable("no moving pixels in the window")
    arr = np.array([[p[0] * p[2], p[1] * p[2], p[2], p[3]] for p in good])
    mx, my = np.median(arr[:, 0]), np.median(arr[:, 1])
    direction = math.degrees(math.atan2(my, mx)) % 360.0
    speed = float(np.median(arr[:, 2]))
    confidence = float(len(good) / len(recent) * np.median(arr[:, 3]))
    return WindEstimate(direction, speed, min(max(confidence, 0.0), 1.0), arr)


def rim_mask(shape, margin=0.0):
    """True outside the inscribed mirror disc (the static region of simulator frames)."""
    h, w = shape
    rr, cc = np.mgrid[0:h, 0:w]
    r = np.hypot(cc + 0.5 - w / 2, rr + 0.5 - h / 2)
    return r > (min(h, w) / 2 - margin)
