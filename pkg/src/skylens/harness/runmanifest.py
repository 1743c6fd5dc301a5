"""Per-run provenance record written next to every CLI output."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import __version__
from .. import io as _io

FILENAME = "run_manifest.json"


def path_sha256(path) -> str:
    """File hash, or for a directory a hash over its sorted (name, file hash) listing."""
    p = Path(path)
    if not p.is_dir():
        return _io.file_sha256(p)
    h = hashlib.sha256()
    for f in sorted(q for q in p.rglob("*") if q.is_file()):
        h.update(f"{f.relative_to(p).as_posix()}\0{_io.file_sha256(f)}\n".encode())
    return h.hexdigest()


def _entry(path) -> dict:
    return {"path": str(Path(path)), "sha256": path_sha256(path)}


@dataclass
class RunManifest:
    """Config snapshot, seed, hashed inputs and outputs, and the tool version.

    Nothing time- or host-dependent is recorded, so repeating a run with the
    same command and seed yields the same ``content_hash``.
    """

    command: str
    config: dict
    seed: int
    inputs: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    version: str = __version__

    def add_input(self, path) -> None:
        self.inputs.append(_entry(path))

    def add_artifact(self, path) -> None:
        self.artifacts.append(_entry(path))

    def body(self) -> dict:
        d = asdict(self)
        d["inputs"] = sorted(d["inputs"], key=lambda e: e["path"])
        d["artifacts"] = sorted(d["artifacts"], key=lambda e: e["path"])
        return d

    @property
    def content_hash(self) -> str:
        blob = json.dumps(self.body(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def write(self, target) -> Path:
        """Write into directory ``target`` as run_manifest.json, or to a ``.json`` path."""
        path = Path(target)
        if path.suffix != ".json":
            path = path / FILENAME
        d = self.body()
        d["content_hash"] = self.content_hash
        path.write_text(json.dumps(d, indent=1, sort_keys=True, default=str) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        stored = d.pop("content_hash", None)
        m = cls(**d)
        if stored is not None and stored != m.content_hash:
            raise ValueError(f"{path}: content hash mismatch")
        return m

    def verify(self) -> list:
        """Paths whose current hash differs from the recorded one."""
        bad = []
        for e in self.inputs + self.artifacts:
            p = Path(e["path"])
            if not p.exists() or path_sha256(p) != e["sha256"]:
                bad.append(e["path"])
        return bad
