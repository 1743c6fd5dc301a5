"""Per-horizon metric tables, CSV output and a dependency-free SVG chart.

CSV schema: ``horizon_s,method,mirror,metric,value,count`` (one row per cell;
``value`` is empty when the cell is absent).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .. import io as _io

HEADER = ["horizon_s", "method", "mirror", "metric", "value", "count"]


@dataclass
class HorizonTable:
    rows: list = field(default_factory=list)

    def add(self, horizon_s, method, mirror, metric, value, count):
        v = float(value)
        self.rows.append((int(horizon_s), method, mirror, metric,
                          v if math.isfinite(v) else None, int(count)))

    def series(self, method, mirror, metric):
        sel = sorted((r for r in self.rows if r[1] == method and r[2] == mirror and r[3] == metric),
                     key=lambda r: r[0])
        h = np.array([r[0] for r in sel])
        v = np.array([np.nan if r[4] is None else r[4] for r in sel])
        return h, v

    def keys(self):
        return sorted({(r[1], r[2], r[3]) for r in self.rows})

    def write_csv(self, path):
        _io.write_csv(path, HEADER, [[h, m, mi, me, "" if v is None else repr(v), c]
                                     for h, m, mi, me, v, c in self.rows])

    @classmethod
    def read_csv(cls, path):
        header, rows = _io.read_csv(path)
        if header != HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        t = cls()
        for h, m, mi, me, v, c in rows:
            t.rows.append((int(h), m, mi, me, float(v) if v else None, int(c)))
        return t

    @classmethod
    def mean_of(cls, tables):
        """Cell-wise mean over runs (e.g. seeds); counts are summed."""
        acc: dict = {}
        for t in tables:
            for h, m, mi, me, v, c in t.rows:
                a = acc.setdefault((h, m, mi, me), [[], 0])
                if v is not None:
                    a[0].append(v)
                a[1] += c
        out = cls()
        for (h, m, mi, me), (vals, c) in sorted(acc.items()):
            out.add(h, m, mi, me, float(np.mean(vals)) if vals else float("nan"), c)
        return out


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def write_svg(table: HorizonTable, metric, path, title="", width=640, height=400):
    """Line chart of ``metric`` against horizon (minutes) for every method/mirror."""
    series = [(m, mi) for m, mi, me in table.keys() if me == metric]
    pad = 50
    pts_all = [table.series(m, mi, metric) for m, mi in series]
    hmax = max((h.max() for h, _ in pts_all if len(h)), default=1) / 60.0
    vals = np.concatenate([v[np.isfinite(v)] for _, v in pts_all]) if pts_all else np.zeros(1)
    lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    sx = lambda x: pad + (width - 2 * pad) * x / hmax
    sy = lambda y: height - pad - (height - 2 * pad) * (y - lo) / (hi - lo)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">horizon (min)</text>',
           f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})">'
           f'{escape(metric)}</text>']
    for frac in (0.0, 0.5, 1.0):
        y = lo + frac * (hi - lo)
        out.append(f'<text x="{pad - 5}" y="{sy(y) + 4:.1f}" text-anchor="end" font-size="10">{y:.2f}</text>')
    for i, ((m, mi), (h, v)) in enumerate(zip(series, pts_all)):
        col = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{sx(a / 60.0):.1f},{sy(b):.1f}" for a, b in zip(h, v) if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{width - pad - 150}" y="{pad + 14 * i}" font-size="11" fill="{col}">'
                   f'{escape(m)} / {escape(mi)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
