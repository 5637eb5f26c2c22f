"""Feature/label file formats and dataset directories.

Dataset layout::

    <root>/manifest.json
    <root>/features/<video>.cft
    <root>/labels/<video>.txt
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FormatError, InputError

FEAT_MAGIC = b"CLOTFEAT"
FEAT_VERSION = 1
_HEADER = struct.Struct("<8sIII")


def write_features(path, x) -> None:
    """N x D matrix stored as little-endian float32 after a 20-byte header."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise FormatError(f"features must be 2-D, got shape {x.shape}")
    n, d = x.shape
    Path(path).write_bytes(
        _HEADER.pack(FEAT_MAGIC, FEAT_VERSION, n, d) + np.ascontiguousarray(x, dtype="<f4").tobytes()
    )


def read_features(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: header needs {_HEADER.size} bytes, file has {len(buf)}")
    magic, version, n, d = _HEADER.unpack_from(buf, 0)
    if magic != FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != FEAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 8")
    expected = 4 * n * d
    actual = len(buf) - _HEADER.size
    if actual != expected:
        raise FormatError(
            f"{path}: payload at byte offset {_HEADER.size} should be {expected} bytes "
            f"for {n}x{d}, found {actual}"
        )
    return np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(n, d).astype(np.float64)


def write_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.size and labels.min() < 0:
        raise FormatError("labels must be nonnegative")
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def read_labels(path) -> np.ndarray:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            value = int(line)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: not an integer label: {line!r}") from None
        if value < 0:
            raise FormatError(f"{path}:{lineno}: negative label {value}")
        out.append(value)
    return np.asarray(out, dtype=np.int64)


@dataclass
class Video:
    name: str
    features: np.ndarray
    labels: np.ndarray | None = None
    activity: str = "default"


@dataclass
class Dataset:
    root: Path
    videos: list[Video]
    manifest: dict

    @property
    def n_actions(self) -> int | None:
        k = self.manifest.get("k_actions")
        return int(k) if k is not None else None

    def activities(self) -> dict[str, list[Video]]:
        groups: dict[str, list[Video]] = {}
        for v in self.videos:
            groups.setdefault(v.activity, []).append(v)
        return groups


def load_dataset(root, require_labels: bool = False) -> Dataset:
    root = Path(root)
    feat_dir = root / "features"
    if not feat_dir.is_dir():
        raise InputError(f"{root}: missing features/ directory")
    manifest_path = root / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    activity_of = {v["name"]: v.get("activity", "default") for v in manifest.get("videos", [])}
    videos = []
    for fpath in sorted(feat_dir.glob("*.cft")):
        name = fpath.stem
        x = read_features(fpath)
        lpath = root / "labels" / f"{name}.txt"
        labels = None
        if lpath.exists():
            labels = read_labels(lpath)
            if labels.shape[0] != x.shape[0]:
                raise FormatError(f"{lpath}: {labels.shape[0]} labels for {x.shape[0]} frames")
        elif require_labels:
            raise InputError(f"missing label file {lpath}")
        videos.append(Video(name, x, labels, activity_of.get(name, "default")))
    if not videos:
        raise InputError(f"{feat_dir}: no .cft feature files")
    return Dataset(root, videos, manifest)


def write_dataset(root, videos: list[Video], manifest: dict) -> None:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for v in videos:
        write_features(root / "features" / f"{v.name}.cft", v.features)
        if v.labels is not None:
            write_labels(root / "labels" / f"{v.name}.txt", v.labels)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def label_dir(path) -> Path:
    """Accept either a directory of ``.txt`` label files or a dataset root."""
    path = Path(path)
    if (path / "labels").is_dir():
        return path / "labels"
    return path
