"""Raster and CSV persistence.

PFM layout used throughout: header ``PF`` (3 channels) or ``Pf`` (1 channel),
then ``width height``, then the scale ``-1.0`` (negative means little-endian),
then float32 samples. Scanlines are stored bottom-to-top, as in the original
PFM definition, so row 0 of an array is the *last* scanline in the file.
"""

from __future__ import annotations

import csv
import hashlib
import os
from pathlib import Path

import numpy as np


def write_pfm(path, image) -> None:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM needs HxW or HxWx3, got {img.shape}")
    h, w = img.shape[:2]
    data = np.ascontiguousarray(img[::-1]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        tag = fh.readline().strip()
        if tag not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if tag == b"PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype, count=w * h * ch)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)


def tonemap(hdr, exposure=1.0, gamma=2.2) -> np.ndarray:
    """8-bit preview: Reinhard curve then gamma."""
    x = np.maximum(np.asarray(hdr, dtype=np.float64) * exposure, 0.0)
    y = (x / (1.0 + x)) ** (1.0 / gamma)
    return np.clip(np.round(y * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, rgb8) -> None:
    rgb8 = np.asarray(rgb8, dtype=np.uint8)
    if rgb8.ndim != 3 or rgb8.shape[2] != 3:
        raise ValueError("PPM needs HxWx3 uint8")
    h, w = rgb8.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(rgb8).tobytes())


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def fmt(x) -> str:
    """Stable text form of a float (round-trips exactly)."""
    if x is None:
        return ""
    return repr(float(x))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def data_dir(default="data") -> Path:
    return Path(os.environ.get("SKYLENS_DATA_DIR", default))
