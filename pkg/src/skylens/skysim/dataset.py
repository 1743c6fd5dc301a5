"""Seeded multi-day scene generation and on-disk frame datasets."""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import io as _io
from .. import mirror as _mirror
from .camera import camera_for
from .clouds import CloudField
from .render import CloudScene, render_frame
from .sun import SunEphemeris

T0 = 30.0
MIRROR_KINDS = ("designed", "hemisphere")
MANIFEST_HEADER = ["path", "timestamp_s", "sun_x", "sun_y", "occluded", "ghi"]


@functools.lru_cache(maxsize=16)
def mirror_profile(kind: str, config: _mirror.OpticalConfig = _mirror.OpticalConfig()):
    if kind == "designed":
        return _mirror.solve_profile(config)
    if kind == "hemisphere":
        return _mirror.matched_hemisphere(config)
    raise ValueError(f"unknown mirror kind {kind!r}")


def day_timestamps(sun: SunEphemeris, t0: float = T0) -> np.ndarray:
    n = int(round(sun.duration / t0)) + 1
    return np.arange(n) * t0


@dataclass(frozen=True)
class DayConfig:
    index: int
    clouds: CloudField
    sun: SunEphemeris

    @property
    def scene(self) -> CloudScene:
        return CloudScene(self.clouds, self.sun)

    def to_dict(self):
        d = {"index": self.index, "clouds": asdict(self.clouds), "sun": asdict(self.sun)}
        d["clouds"]["wind"] = list(self.clouds.wind)
        return d

    @classmethod
    def from_dict(cls, d):
        c = dict(d["clouds"])
        c["wind"] = tuple(c["wind"])
        return cls(int(d["index"]), CloudField(**c), SunEphemeris(**d["sun"]))


@dataclass(frozen=True)
class DayRanges:
    """Ranges the per-day scene parameters are drawn from (uniformly)."""

    wind_speed: tuple = (10.0, 25.0)
    base_scale: tuple = (1500.0, 4000.0)
    coverage_threshold: tuple = (0.45, 0.62)
    softness: tuple = (0.03, 0.10)
    max_elevation: tuple = (45.0, 80.0)
    day_length_h: tuple = (10.0, 14.0)
    octaves: int = 4
    height: float = 1500.0
    regime_scale: tuple = (15000.0, 40000.0)
    regime_amplitude: tuple = (0.25, 0.5)


def random_day_configs(master_seed: int, n_days: int, ranges: DayRanges = DayRanges()):
    """Independent, reproducible scene parameters for each day."""
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    children = np.random.SeedSequence(master_seed).spawn(n_days)
    days = []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        speed = rng.uniform(*ranges.wind_speed)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        clouds = CloudField(
            seed=int(rng.integers(0, 2**62)),
            octaves=ranges.octaves,
            base_scale=float(rng.uniform(*ranges.base_scale)),
            coverage_threshold=float(rng.uniform(*ranges.coverage_threshold)),
            softness=float(rng.uniform(*ranges.softness)),
            wind=(float(speed * math.cos(ang)), float(speed * math.sin(ang))),
            height=ranges.height,
        )
        sun = SunEphemeris(
            max_elevation=float(rng.uniform(*ranges.max_elevation)),
            day_length_h=float(rng.uniform(*ranges.day_length_h)),
        )
        # drawn last so the earlier draws do not depend on these ranges
        clouds = replace(clouds, regime_scale=float(rng.uniform(*ranges.regime_scale)),
                         regime_amplitude=float(rng.uniform(*ranges.regime_amplitude)))
        days.append(DayConfig(i, clouds, sun))
    return days


@dataclass
class FrameRecord:
    path: str
    timestamp: float
    sun_pixel: tuple | None
    occluded: bool
    ghi: float


@dataclass
class DatasetManifest:
    records: list
    seed: int
    mirror: str
    t0: float
    resolution: int
    root: Path = field(default=Path("."))
    day: DayConfig | None = None

    def __len__(self):
        return len(self.records)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.records])

    @property
    def ghi(self) -> np.ndarray:
        return np.array([r.ghi for r in self.records])

    @property
    def occluded(self) -> np.ndarray:
        return np.array([r.occluded for r in self.records], dtype=bool)

    def frame(self, i) -> np.ndarray:
        return _io.read_pfm(self.root / self.records[i].path)

    def write(self, csv_path) -> None:
        csv_path = Path(csv_path)
        rows = []
        for r in self.records:
            sx, sy = r.sun_pixel if r.sun_pixel is not None else (None, None)
            rows.append([r.path, _io.fmt(r.timestamp), _io.fmt(sx), _io.fmt(sy),
                         int(r.occluded), _io.fmt(r.ghi)])
        _io.write_csv(csv_path, MANIFEST_HEADER, rows)
        meta = {"seed": self.seed, "mirror": self.mirror, "t0": self.t0,
                "resolution": self.resolution,
                "day": self.day.to_dict() if self.day is not None else None}
        csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_manifest(csv_path, check_files=True) -> DatasetManifest:
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise FileNotFoundError(f"manifest not found: {csv_path}")
    header, rows = _io.read_csv(csv_path)
    if header != MANIFEST_HEADER:
        raise ValueError(f"{csv_path}: unexpected header {header}")
    meta_path = csv_path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    records = []
    for path, ts, sx, sy, occ, ghi in rows:
        sun = (float(sx), float(sy)) if sx and sy else None
        records.append(FrameRecord(path, float(ts), sun, bool(int(occ)), float(ghi)))
    t0 = float(meta.get("t0", T0))
    ts = np.array([r.timestamp for r in records])
    if len(ts) > 1 and not np.allclose(np.diff(ts), t0):
        raise ValueError(f"{csv_path}: timestamps are not spaced by T0 = {t0}")
    if check_files:
        for r in records:
            if not (csv_path.parent / r.path).exists():
                raise FileNotFoundError(f"frame referenced by manifest missing: {r.path}")
    day = DayConfig.from_dict(meta["day"]) if meta.get("day") else None
    return DatasetManifest(records, int(meta.get("seed", 0)), meta.get("mirror", "designed"),
                           t0, int(meta.get("resolution", 0)), csv_path.parent, day)


def simulate_day(day: DayConfig, out_dir, mirrors=MIRROR_KINDS,
                 config: _mirror.OpticalConfig = _mirror.OpticalConfig(),
                 resolution: int = 256, t0: float = T0, seed: int = 0,
                 max_frames: int | None = None, previews: bool = False) -> dict:
    """Render a day for each mirror kind and write frames plus manifests.

    Layout: ``out_dir/day{NN}_{kind}.csv`` (+ ``.json`` sidecar) and frames in
    ``out_dir/day{NN}_{kind}/frame_{iiii}.pfm``. ``max_frames`` truncates the
    day (smoke runs only).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    times = day_timestamps(day.sun, t0)
    if max_frames is not None:
        times = times[:max_frames]
    scene = day.scene
    result = {}
    for kind in mirrors:
        cam = camera_for(mirror_profile(kind, config), config, resolution)
        stem = f"day{day.index:02d}_{kind}"
        fdir = out_dir / stem
        fdir.mkdir(exist_ok=True)
        records = []
        for i, t in enumerate(times):
            fr = render_frame(cam, scene, float(t))
            rel = f"{stem}/frame_{i:04d}.pfm"
            _io.write_pfm(out_dir / rel, fr.hdr)
            if previews:
                _io.write_ppm(fdir / f"frame_{i:04d}.ppm", _io.tonemap(fr.hdr))
            records.append(FrameRecord(rel, float(t), fr.sun_pixel, fr.occluded, fr.ghi_true))
        man = DatasetManifest(records, seed, kind, t0, resolution, out_dir, day)
        man.write(out_dir / f"{stem}.csv")
        result[kind] = man
    return result
