"""Where experiment days come from: in-memory simulation or manifests on disk."""

from __future__ import annotations

import re
from pathlib import Path

from .. import mirror as _mirror
from ..preprocess import SunTrack, WindEstimate
from ..skysim.dataset import DayRanges, load_manifest, random_day_configs
from ..spacetime import build_spacetime, track_sun_pixels
from .simdata import SLICE_HALF_LEN, SimDay, simulate_spacetime, wind_image_deg

_STEM = re.compile(r"^day(\d+)_([a-z]+)\.csv$")


class SyntheticSource:
    """Seeded random days rendered lazily (only the pixels slices read)."""

    def __init__(self, seed, n_days, ranges: DayRanges = DayRanges(), resolution=256,
                 optical: _mirror.OpticalConfig = _mirror.OpticalConfig()):
        self.configs = {d.index: d for d in random_day_configs(seed, n_days, ranges)}
        self.resolution = resolution
        self.optical = optical

    @property
    def days(self):
        return sorted(self.configs)

    def inputs(self):
        return []

    def load(self, index, mirror, half_len=SLICE_HALF_LEN, band=1) -> SimDay:
        return simulate_spacetime(self.configs[index], mirror, self.optical, self.resolution,
                                  half_len, band)


def discover_manifests(data_dir) -> dict:
    """``{day: {mirror: csv_path}}`` for every ``dayNN_<mirror>.csv`` in ``data_dir``."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    found: dict = {}
    for p in sorted(data_dir.iterdir()):
        m = _STEM.match(p.name)
        if m:
            found.setdefault(int(m.group(1)), {})[m.group(2)] = p
    return found


def load_simday(csv_path, half_len=SLICE_HALF_LEN, band=1, meta_dir=None) -> SimDay:
    """Space-time image of one on-disk day.

    Sun positions and wind come from ``meta_dir`` (``sun_track.csv``,
    ``wind.csv``) when present, else from the manifest and its scene sidecar.
    Pixels whose radiance is exactly zero (outside the mirror) are invalid.
    """
    man = load_manifest(csv_path)
    ts = man.timestamps
    meta_dir = Path(meta_dir) if meta_dir is not None else None
    if meta_dir is not None and (meta_dir / "sun_track.csv").exists():
        suns = track_sun_pixels(SunTrack.read_csv(meta_dir / "sun_track.csv"), ts)
    else:
        suns = [r.sun_pixel for r in man.records]
    if meta_dir is not None and (meta_dir / "wind.csv").exists():
        wind = WindEstimate.read_csv(meta_dir / "wind.csv").direction
    elif man.day is not None:
        wind = wind_image_deg(man.day)
    else:
        raise ValueError(f"{csv_path}: no wind estimate; run preprocess first")
    frames = (man.frame(i) for i in range(len(man)))
    st = build_spacetime(frames, suns, wind, half_len, band, ts, man.t0,
                         lambda f: f.sum(axis=-1) > 0)
    m = _STEM.match(Path(csv_path).name)
    index = man.day.index if man.day is not None else int(m.group(1)) if m else 0
    return SimDay(index, man.mirror, st, man.occluded, man.ghi, man.day)


class DiskSource:
    """Days stored as manifests plus PFM frames under one directory."""

    def __init__(self, data_dir, meta_root=None):
        self.data_dir = Path(data_dir)
        self.found = discover_manifests(self.data_dir)
        if not self.found:
            raise FileNotFoundError(f"no dayNN_<mirror>.csv manifests in {self.data_dir}")
        self.meta_root = Path(meta_root) if meta_root is not None else None

    @classmethod
    def from_paths(cls, paths, meta_root=None) -> "DiskSource":
        """Source over explicitly listed manifests (named ``dayNN_<mirror>.csv``)."""
        self = cls.__new__(cls)
        self.found = {}
        for p in map(Path, paths):
            if not p.exists():
                raise FileNotFoundError(f"manifest not found: {p}")
            m = _STEM.match(p.name)
            if not m:
                raise ValueError(f"{p}: manifest names must look like dayNN_<mirror>.csv")
            self.found.setdefault(int(m.group(1)), {})[m.group(2)] = p
        self.data_dir = Path(paths[0]).parent
        self.meta_root = Path(meta_root) if meta_root is not None else None
        return self

    @property
    def days(self):
        return sorted(self.found)

    def path(self, index, mirror) -> Path:
        try:
            return self.found[index][mirror]
        except KeyError:
            raise FileNotFoundError(
                f"manifest not found: {self.data_dir / f'day{index:02d}_{mirror}.csv'}") from None

    def inputs(self):
        out = []
        for d in self.days:
            for kind in sorted(self.found[d]):
                p = self.found[d][kind]
                out.append(p)
                if p.with_suffix(".json").exists():
                    out.append(p.with_suffix(".json"))
        return out

    def load(self, index, mirror, half_len=SLICE_HALF_LEN, band=1) -> SimDay:
        p = self.path(index, mirror)
        meta = None
        if self.meta_root is not None:
            meta = self.meta_root / (p.stem + ".meta")
        elif p.with_suffix(".meta").is_dir():
            meta = p.with_suffix(".meta")
        return load_simday(p, half_len, band, meta)

