"""In-memory dataset preparation for training and evaluation.

Scans are normalized once (scan-level statistics), windows are indexed
lazily by (scan, start) pairs, and per-window intensity masks are cached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..preprocess import NormalizedScan, WindowPlan, extract_windows, normalize_scan
from ..volume_io import DatasetManifest, ManifestEntry, Scan4D, read_scan


@dataclass
class PreparedScan:
    subject_id: str
    norm: NormalizedScan
    labels: dict
    windows: list = field(default_factory=list)  # list[WindowBatch]


@dataclass
class PreparedSplit:
    scans: list[PreparedScan]

    def window_index(self) -> list[tuple[int, int]]:
        """Flat (scan index, window index) pairs in deterministic order."""
        return [(i, j) for i, s in enumerate(self.scans) for j in range(len(s.windows))]

    @property
    def n_windows(self) -> int:
        return sum(len(s.windows) for s in self.scans)


def load_scans(manifest: DatasetManifest,
               scans: Optional[dict[str, Scan4D]] = None) -> dict[str, Scan4D]:
    if scans is not None:
        return scans
    return {e.subject_id: read_scan(e.path, subject_id=e.subject_id)
            for e in manifest.entries}


def prepare_split(entries: list[ManifestEntry], scans: dict[str, Scan4D],
                  plan: WindowPlan, input_mode: str = "two_channel") -> PreparedSplit:
    prepared = []
    for e in entries:
        norm = normalize_scan(scans[e.subject_id], input_mode=input_mode)
        windows = extract_windows(norm, plan)
        prepared.append(PreparedScan(subject_id=e.subject_id, norm=norm,
                                     labels=e.labels, windows=windows))
    return PreparedSplit(scans=prepared)


def prepare_dataset(manifest: DatasetManifest, plan: WindowPlan,
                    input_mode: str = "two_channel",
                    scans: Optional[dict[str, Scan4D]] = None,
                    splits: tuple[str, ...] = ("train", "validation", "test"),
                    ) -> dict[str, PreparedSplit]:
    raw = load_scans(manifest, scans)
    return {name: prepare_split(manifest.subset(name), raw, plan, input_mode)
            for name in splits}


def stack_windows(split: PreparedSplit, pairs: list[tuple[int, int]]
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assemble (inputs, targets, masks) batches from (scan, window) pairs."""
    inputs = np.stack([split.scans[i].windows[j].inputs for i, j in pairs])
    targets = np.stack([split.scans[i].windows[j].target for i, j in pairs])
    masks = np.stack([split.scans[i].windows[j].intensity_mask for i, j in pairs])
    return inputs, targets, masks
