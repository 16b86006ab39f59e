"""Scan container format, dataset manifests, anatomy masks, and splits.

The on-disk scan container is deliberately minimal: little-endian, magic
"TFFV", explicit extents, raw f32 frame data, optional u8 anatomy mask and
a trailing CRC32 over everything before it. Converters from standard
neuroimaging formats are an extension point, not implemented here.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    BadMagic,
    ChecksumMismatch,
    DegenerateScan,
    InvalidFractions,
    TruncatedFile,
    VersionUnsupported,
)

SCAN_MAGIC = b"TFFV"
SCAN_VERSION = 1
SPLIT_NAMES = ("train", "validation", "test")


@dataclass
class Scan4D:
    """One subject's raw 4D recording: T frames of W x H x D voxels."""

    frames: np.ndarray  # (T, W, H, D) float32
    subject_id: str
    repetition_interval: float = 1.0  # seconds, metadata only
    anatomy: Optional[np.ndarray] = None  # (W, H, D) bool

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be 4-d (T, W, H, D), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("scan needs at least one frame")
        if self.anatomy is not None:
            self.anatomy = np.asarray(self.anatomy, dtype=bool)
            if self.anatomy.shape != self.frames.shape[1:]:
                raise ValueError(
                    f"anatomy mask {self.anatomy.shape} does not match frames {self.frames.shape[1:]}"
                )

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.frames.shape[1:]


def write_scan(scan: Scan4D, path) -> None:
    t, w, h, d = scan.frames.shape
    has_mask = scan.anatomy is not None
    payload = bytearray()
    payload += SCAN_MAGIC
    payload += struct.pack("<IIIIIB", SCAN_VERSION, t, w, h, d, int(has_mask))
    payload += scan.frames.astype("<f4").tobytes(order="C")
    if has_mask:
        payload += scan.anatomy.astype(np.uint8).tobytes(order="C")
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(payload))


def read_scan(path, subject_id: Optional[str] = None) -> Scan4D:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != SCAN_MAGIC:
        raise BadMagic(f"{path}: not a scan container")
    header_size = 4 + struct.calcsize("<IIIIIB")
    if len(raw) < header_size + 4:
        raise TruncatedFile(f"{path}: file shorter than header")
    version, t, w, h, d, has_mask = struct.unpack_from("<IIIIIB", raw, 4)
    if version != SCAN_VERSION:
        raise VersionUnsupported(f"{path}: container version {version}")
    n_frame_bytes = t * w * h * d * 4
    n_mask_bytes = w * h * d if has_mask else 0
    expected = header_size + n_frame_bytes + n_mask_bytes + 4
    if len(raw) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(raw)}")
    (crc_stored,) = struct.unpack_from("<I", raw, expected - 4)
    if zlib.crc32(raw[: expected - 4]) & 0xFFFFFFFF != crc_stored:
        raise ChecksumMismatch(f"{path}: CRC32 mismatch")
    frames = np.frombuffer(raw, dtype="<f4", count=t * w * h * d, offset=header_size)
    frames = frames.reshape(t, w, h, d).astype(np.float32)
    anatomy = None
    if has_mask:
        anatomy = np.frombuffer(raw, dtype=np.uint8, count=w * h * d,
                                offset=header_size + n_frame_bytes)
        anatomy = anatomy.reshape(w, h, d).astype(bool)
    if subject_id is None:
        subject_id = Path(path).stem
    return Scan4D(frames=frames, subject_id=subject_id, anatomy=anatomy)


def infer_anatomy_mask(scan: Scan4D, epsilon_fraction: float = 0.01) -> np.ndarray:
    """Tissue voxels: temporal std > 0 and temporal mean above a background floor.

    The floor is ``epsilon_fraction`` of the largest per-voxel temporal mean,
    which excludes air voxels. A mask stored on the scan wins outright.
    """
    if scan.anatomy is not None:
        return scan.anatomy
    if scan.n_frames < 2:
        raise DegenerateScan("variance-based anatomy inference needs T >= 2 or a stored mask")
    mean = scan.frames.mean(axis=0)
    std = scan.frames.std(axis=0)
    eps_bg = epsilon_fraction * float(mean.max())
    return (std > 0) & (mean > eps_bg)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str
    subject_id: str
    labels: dict
    split: Optional[str] = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [e.subject_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("subject_ids must be unique within a manifest")

    def subset(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def label_schema(self) -> dict:
        """Per-task type, inferred: string labels are categorical, numbers real-valued."""
        schema: dict = {}
        for e in self.entries:
            for task, value in e.labels.items():
                if isinstance(value, str):
                    info = schema.setdefault(task, {"kind": "categorical", "classes": set()})
                    if info["kind"] != "categorical":
                        raise ValueError(f"task {task!r} mixes string and numeric labels")
                    info["classes"].add(value)
                else:
                    info = schema.setdefault(task, {"kind": "real"})
                    if info["kind"] != "real":
                        raise ValueError(f"task {task!r} mixes string and numeric labels")
        for info in schema.values():
            if info["kind"] == "categorical":
                info["classes"] = sorted(info["classes"])
        return schema

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(
                    {"path": e.path, "subject_id": e.subject_id,
                     "labels": e.labels, "split": e.split},
                    sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                entries.append(ManifestEntry(
                    path=obj["path"], subject_id=obj["subject_id"],
                    labels=obj.get("labels", {}), split=obj.get("split")))
        return cls(entries=entries)


def split_sizes(n: int, fractions: tuple[float, ...]) -> list[int]:
    """Deterministic split sizes: every split after the first is rounded up
    to guarantee at least its requested share; the first absorbs the rest."""
    if any(f < 0 for f in fractions):
        raise InvalidFractions(f"fractions must be nonnegative: {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidFractions(f"fractions must sum to 1: {fractions}")
    rest = [math.ceil(f * n) if f > 0 else 0 for f in fractions[1:]]
    first = n - sum(rest)
    if first < 0:
        raise InvalidFractions(f"fractions {fractions} over-allocate {n} subjects")
    return [first] + rest


def split_dataset(manifest: DatasetManifest, fractions: tuple[float, float, float],
                  seed: int) -> DatasetManifest:
    """Assign subject-level split tags; windows of one subject never cross splits."""
    n = len(manifest.entries)
    sizes = split_sizes(n, fractions)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    tags = {}
    cursor = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        for idx in order[cursor:cursor + size]:
            tags[int(idx)] = name
        cursor += size
    entries = [ManifestEntry(e.path, e.subject_id, e.labels, tags[i])
               for i, e in enumerate(manifest.entries)]
    return DatasetManifest(entries=entries)
