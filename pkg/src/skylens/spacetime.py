"""Sun-centred space-time slices, shear warping and back-projected occlusion.

Axes: a :class:`SpaceTimeImage` raster is indexed ``[offset, frame, channel]``
with offset row ``L`` at the sun and positive offsets pointing *upwind*
(where clouds that will reach the sun are now). The streak angle ``theta``
relates the two axes through ``tan(theta)`` = apparent cloud speed in slice
pixels per frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from . import io as _io

THETA_GRID = tuple(float(a) for a in range(60, 86))
MIN_COUNT = 5


class InsufficientData(RuntimeError):
    pass


def red_blue_ratio(rgb):
    """``(B - R) / (B + R)``, 0 where ``B + R == 0``. Works on ``(..., 3)`` arrays."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, b = rgb[..., 0], rgb[..., 2]
    s = b + r
    out = np.where(s > 0.0, (b - r) / np.where(s > 0.0, s, 1.0), 0.0)
    return out if out.ndim else float(out)


# ------------------------------------------------------------------ slices

def slice_positions(sun_pixel, theta_deg, half_len, band=1):
    """Continuous ``(x, y)`` of every slice sample, each shaped ``(2L+1, band)``."""
    th = math.radians(theta_deg)
    ux, uy = math.cos(th), math.sin(th)
    d = np.arange(-half_len, half_len + 1, dtype=np.float64)[:, None]
    e = (np.arange(band, dtype=np.float64) - 0.5 * (band - 1))[None, :]
    x = sun_pixel[0] + d * ux - e * uy
    y = sun_pixel[1] + d * uy + e * ux
    return x, y


def _bilinear_setup(x, y, shape):
    h, w = shape[:2]
    fx = x - 0.5
    fy = y - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    wx = fx - x0
    wy = fy - y0
    corners = []
    for dy, wy_ in ((0, 1.0 - wy), (1, wy)):
        for dx, wx_ in ((0, 1.0 - wx), (1, wx)):
            wgt = wy_ * wx_
            cy, cx = y0 + dy, x0 + dx
            inside = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
            corners.append((cy, cx, wgt, inside))
    return corners


def slice_pixels(sun_pixel, theta_deg, half_len, band, shape):
    """Flat ids ``row * W + col`` of every pixel a slice reads (for sparse rendering)."""
    x, y = slice_positions(sun_pixel, theta_deg, half_len, band)
    ids = []
    for cy, cx, wgt, inside in _bilinear_setup(x, y, shape):
        use = inside & (wgt > 0)
        ids.append(cy[use] * shape[1] + cx[use])
    return np.unique(np.concatenate(ids))


def extract_slice(frame, sun_pixel, theta_deg, half_len, band=1, valid=None):
    """Bilinear samples along ``sun + d * (cos theta, sin theta)``, ``d = -L..L``.

    Each sample is averaged over ``band`` offsets perpendicular to the line.
    A sample is invalid if any contributing pixel lies outside the raster or
    is flagged invalid; invalid samples are returned as zeros.
    Returns ``(values (2L+1, C), ok (2L+1,))``.
    """
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = img.shape[:2]
    vmask = np.ones((h, w), bool) if valid is None else np.asarray(valid, bool)
    x, y = slice_positions(sun_pixel, theta_deg, half_len, band)
    acc = np.zeros(x.shape + (img.shape[2],))
    ok = np.ones(x.shape, bool)
    for cy, cx, wgt, inside in _bilinear_setup(x, y, (h, w)):
        need = wgt > 0
        ok &= ~need | inside
        cyc = np.clip(cy, 0, h - 1)
        cxc = np.clip(cx, 0, w - 1)
        ok &= ~need | vmask[cyc, cxc]
        acc += np.where(need, wgt, 0.0)[..., None] * img[cyc, cxc]
    ok_line = ok.all(axis=1)
    vals = np.where(ok_line[:, None], acc.mean(axis=1), 0.0)
    return vals, ok_line


@dataclass
class SpaceTimeImage:
    data: np.ndarray          # (2L+1, F, 3)
    valid: np.ndarray         # (2L+1, F)
    half_len: int
    band: int
    wind_deg: float
    t0: float
    timestamps: np.ndarray
    sun: np.ndarray = field(default=None, repr=False)  # (F, 2), NaN when absent

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def slice_deg(self) -> float:
        return (self.wind_deg + 180.0) % 360.0

    def ratio(self):
        return np.where(self.valid, red_blue_ratio(self.data), 0.0)

    def write(self, stem) -> None:
        stem = Path(stem)
        raster = np.where(self.valid[..., None], self.data, np.nan)
        _io.write_pfm(stem.with_suffix(".pfm"), raster)
        sun = self.sun if self.sun is not None else np.full((self.n_frames, 2), np.nan)
        rows = [[f, _io.fmt(t), _io.fmt(sx), _io.fmt(sy), int(self.valid[:, f].sum())]
                for f, (t, (sx, sy)) in enumerate(zip(self.timestamps, sun))]
        _io.write_csv(stem.with_suffix(".csv"),
                      ["frame", "timestamp_s", "sun_x", "sun_y", "valid_count"], rows)
        meta = {"half_len": self.half_len, "band": self.band, "wind_deg": self.wind_deg,
                "t0": self.t0}
        stem.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))

    @classmethod
    def read(cls, stem) -> "SpaceTimeImage":
        stem = Path(stem)
        raster = _io.read_pfm(stem.with_suffix(".pfm"))
        meta = json.loads(stem.with_suffix(".json").read_text())
        _, rows = _io.read_csv(stem.with_suffix(".csv"))
        ts = np.array([float(r[1]) for r in rows])
        sun = np.array([[float(r[2]), float(r[3])] for r in rows])
        valid = np.isfinite(raster).all(axis=-1)
        data = np.where(valid[..., None], raster, 0.0)
        return cls(data, valid, int(meta["half_len"]), int(meta["band"]),
                   float(meta["wind_deg"]), float(meta["t0"]), ts, sun)


def build_spacetime(frames, sun_pixels, wind_deg, half_len, band=1, timestamps=None,
                    t0=30.0, valid_masks=None) -> SpaceTimeImage:
    """Stack one sun-centred slice per frame, oriented so upwind is positive.

    ``sun_pixels`` is a sequence of ``(x, y)`` or None (no sun estimate:
    the column is invalid). ``frames`` may be any iterable of rasters.
    ``valid_masks`` is a sequence of per-frame masks or a function mapping a
    frame to its mask.
    """
    cols, oks, suns = [], [], []
    slice_deg = (wind_deg + 180.0) % 360.0
    masks = valid_masks if valid_masks is not None else None
    for i, (frame, sp) in enumerate(zip(frames, sun_pixels)):
        frame = np.asarray(frame, dtype=np.float64)
        if sp is None or not np.all(np.isfinite(sp)):
            cols.append(np.zeros((2 * half_len + 1, 3)))
            oks.append(np.zeros(2 * half_len + 1, bool))
            suns.append((np.nan, np.nan))
            continue
        vm = None if masks is None else masks(frame) if callable(masks) else masks[i]
        v, ok = extract_slice(frame, sp, slice_deg, half_len, band, vm)
        cols.append(v)
        oks.append(ok)
        suns.append(tuple(sp))
    if len(cols) < 2:
        raise ValueError("need at least 2 frames")
    data = np.stack(cols, axis=1)
    valid = np.stack(oks, axis=1)
    ts = np.arange(len(cols)) * t0 if timestamps is None else np.asarray(timestamps, float)
    return SpaceTimeImage(data, valid, int(half_len), int(band), float(wind_deg), float(t0),
                          ts, np.array(suns, dtype=np.float64))


def track_sun_pixels(track, timestamps):
    """Sun positions from a fitted track; None outside its window."""
    out = []
    for t in timestamps:
        if track.covers(t):
            x, y = track.evaluate(t)
            out.append((float(x), float(y)))
        else:
            out.append(None)
    return out


# ------------------------------------------------------------------- shear

@dataclass
class ShearedWindow:
    values: np.ndarray   # (tau_max+1, tau_max+N+1, 3)
    valid: np.ndarray    # (tau_max+1, tau_max+N+1)
    anchor: int
    theta_deg: float
    tau_max: int
    horizon: int

    @property
    def rows(self):
        return np.arange(self.anchor - self.tau_max, self.anchor + 1)

    @property
    def columns(self):
        return np.arange(self.anchor - self.tau_max, self.anchor + self.horizon + 1)

    def ratio(self):
        return np.where(self.valid, red_blue_ratio(self.values), 0.0)


def _check_theta(theta_deg):
    if not (0.0 < theta_deg < 90.0):
        raise ValueError(f"theta must lie in (0, 90) degrees, got {theta_deg}")


def shear(st: SpaceTimeImage, theta_deg, anchor, tau_max, horizon) -> ShearedWindow:
    """Warp the space-time image so a streak of angle ``theta`` becomes vertical.

    ``V(t, c) = S(frame t, offset (c - t) * tan(theta))`` for ``c >= t``;
    linear interpolation between offset rows; offsets beyond ``L`` invalid.
    """
    _check_theta(theta_deg)
    if anchor - tau_max < 0:
        raise ValueError("anchor - tau_max must be >= 0")
    tan_t = math.tan(math.radians(theta_deg))
    L = st.half_len
    nrow, nfr = st.valid.shape
    t = np.arange(anchor - tau_max, anchor + 1)
    c = np.arange(anchor - tau_max, anchor + horizon + 1)
    lag = (c[None, :] - t[:, None]).astype(np.float64)
    off = lag * tan_t
    pos = L + off
    ok = (lag >= 0) & (off <= L) & (t[:, None] < nfr)
    i0 = np.floor(np.where(ok, pos, 0.0)).astype(np.int64)
    frac = np.where(ok, pos, 0.0) - i0
    i1 = np.minimum(i0 + 1, nrow - 1)
    tt = np.broadcast_to(np.clip(t, 0, nfr - 1)[:, None], lag.shape)
    ok &= st.valid[i0, tt] & ((frac == 0.0) | st.valid[i1, tt])
    vals = ((1.0 - frac)[..., None] * st.data[i0, tt] + frac[..., None] * st.data[i1, tt])
    vals = np.where(ok[..., None], vals, 0.0)
    return ShearedWindow(vals, ok, int(anchor), float(theta_deg), int(tau_max), int(horizon))


def unshear(window: ShearedWindow, half_len):
    """Inverse of :func:`shear` on integer-offset support: rebuild ``S(offset, t)``.

    Returns ``(raster (2L+1, tau_max+1, 3), valid)`` for rows ``t`` of the window.
    """
    tan_t = math.tan(math.radians(window.theta_deg))
    nt, nc = window.valid.shape
    out = np.zeros((2 * half_len + 1, nt, window.values.shape[2]))
    ok = np.zeros((2 * half_len + 1, nt), bool)
    for ti in range(nt):
        for ci in range(ti, nc):
            off = (ci - ti) * tan_t
            r = half_len + off
            if window.valid[ti, ci] and abs(r - round(r)) < 1e-12 and round(r) < 2 * half_len + 1:
                out[int(round(r)), ti] = window.values[ti, ci]
                ok[int(round(r)), ti] = True
    return out, ok


def theta_scores(st: SpaceTimeImage, anchor, grid=THETA_GRID, tau_max=200, horizon=60,
                 min_count=MIN_COUNT):
    """Mean per-column standard deviation of the sheared ratio for each theta."""
    for th in grid:
        _check_theta(th)
    tans = np.array([math.tan(math.radians(g)) for g in grid])
    red = np.ascontiguousarray(st.data[:, :, 0])
    blue = np.ascontiguousarray(st.data[:, :, 2])
    return _kernels.shear_stats(red, blue, np.ascontiguousarray(st.valid), int(anchor), tans,
                                int(tau_max), int(horizon), int(st.half_len), int(min_count))


def optimal_theta(st: SpaceTimeImage, anchor, grid=THETA_GRID, tau_max=200, horizon=60,
                  min_count=MIN_COUNT):
    """Grid angle with the smallest sheared-window column spread (ties: smallest)."""
    grid = tuple(sorted(float(g) for g in grid))
    if not grid:
        raise ValueError("theta grid is empty")
    scores = theta_scores(st, anchor, grid, tau_max, horizon, min_count)
    if not np.any(np.isfinite(scores)):
        raise InsufficientData(f"no column with >= {min_count} valid samples at anchor {anchor}")
    k = int(np.nanargmin(scores))
    return grid[k], scores


@dataclass
class RatioTrace:
    columns: np.ndarray
    values: np.ndarray       # NaN where absent
    counts: np.ndarray

    @property
    def present(self):
        return self.counts > 0


def ratio_trace(window: ShearedWindow) -> RatioTrace:
    r = window.ratio()
    cnt = window.valid.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(cnt > 0, np.where(window.valid, r, 0.0).sum(axis=0) / np.maximum(cnt, 1),
                        np.nan)
    return RatioTrace(window.columns, mean, cnt)


@dataclass
class BackProjection:
    trace: RatioTrace
    theta_deg: float
    scores: np.ndarray       # per-horizon trace value after persistence filling
    occluded: np.ndarray     # bool per horizon 1..N

    def write_csv(self, path, t0=30.0):
        rows = [[_io.fmt((k + 1) * t0), _io.fmt(s), int(o)]
                for k, (s, o) in enumerate(zip(self.scores, self.occluded))]
        _io.write_csv(path, ["horizon_s", "trace", "occluded"], rows)


def horizon_scores(trace: RatioTrace, anchor, horizon):
    """Trace values at ``T+1..T+N``; absent columns repeat the last defined value."""
    cols = trace.columns
    out = np.empty(horizon)
    start = int(np.searchsorted(cols, anchor))
    last = np.nan
    for j in range(start, -1, -1):
        if trace.present[j]:
            last = trace.values[j]
            break
    for k in range(1, horizon + 1):
        j = start + k
        if trace.present[j]:
            last = trace.values[j]
        out[k - 1] = last
    return out


def backproject_predict(st: SpaceTimeImage, anchor, horizon=60, tau_max=200, threshold=0.0,
                        grid=THETA_GRID, min_count=MIN_COUNT) -> BackProjection:
    """Occlusion forecast from the mean ratio of the best-sheared window.

    A horizon is predicted occluded when its trace value dips below ``threshold``.
    """
    theta, _ = optimal_theta(st, anchor, grid, tau_max, horizon, min_count)
    tr = ratio_trace(shear(st, theta, anchor, tau_max, horizon))
    sc = horizon_scores(tr, anchor, horizon)
    occ = np.where(np.isfinite(sc), sc < threshold, False)
    return BackProjection(tr, theta, sc, occ)


def calibrate_threshold(scores, labels) -> float:
    """Threshold maximising Youden's J for the rule ``occluded = score < threshold``.

    Candidates are the lowest score (nothing flagged), midpoints between
    consecutive distinct scores, and just above the highest (everything
    flagged). Ties on J go to the lowest threshold.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    keep = np.isfinite(s)
    s, y = s[keep], y[keep]
    if y.all() or not y.any():
        raise ValueError("calibration needs both label classes")
    u = np.unique(s)
    cands = np.concatenate([[u[0]], 0.5 * (u[1:] + u[:-1]), [np.nextafter(u[-1], np.inf)]])
    pos, neg = y.sum(), (~y).sum()
    order = np.argsort(s, kind="stable")
    ss, yy = s[order], y[order]
    # number of positives / negatives strictly below each candidate
    k = np.searchsorted(ss, cands, side="left")
    cum_pos = np.concatenate([[0], np.cumsum(yy)])
    tp = cum_pos[k]
    fp = k - tp
    j = tp / pos - fp / neg
    return float(cands[int(np.argmax(j))])


def youden_j(scores, labels, threshold) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    pred = s < threshold
    return float(pred[y].mean() - pred[~y].mean())
