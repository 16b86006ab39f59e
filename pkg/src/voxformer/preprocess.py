"""Dual normalization, window extraction, and the intensity-loss mask.

A scan is normalized two ways: a scan-wide z-score (the reconstruction
target) and a per-voxel z-score over time (highlights temporal activation).
Both are concatenated on a channel axis and sliced into length-w windows
with stride s. The intensity mask keeps, per window, the anatomy voxels
whose absolute voxel-normalized value reaches the top (1 - q) share.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateScan, EmptyAnatomy, WindowTooLong, ZeroVariance
from .volume_io import Scan4D, infer_anatomy_mask


@dataclass
class WindowPlan:
    window: int
    stride: int

    def count(self, n_frames: int) -> int:
        if n_frames < self.window:
            return 0
        return (n_frames - self.window) // self.stride + 1

    def starts(self, n_frames: int) -> list[int]:
        return [i * self.stride for i in range(self.count(n_frames))]


@dataclass
class NormalizedScan:
    subject_id: str
    global_norm: np.ndarray  # (T, W, H, D)
    voxel_norm: np.ndarray   # (T, W, H, D)
    combined: np.ndarray     # (T, 2, W, H, D); channel 0 global, channel 1 voxel
    anatomy: np.ndarray      # (W, H, D) bool

    @property
    def n_frames(self) -> int:
        return self.combined.shape[0]


@dataclass
class WindowBatch:
    inputs: np.ndarray          # (w, 2, W, H, D)
    target: np.ndarray          # (w, 1, W, H, D) global-norm slice
    intensity_mask: np.ndarray  # (w, W, H, D) bool
    start: int
    scan_id: str


def global_normalize(frames: np.ndarray) -> np.ndarray:
    """Z-score with one scalar mean/std over all T*W*H*D values."""
    mu = frames.mean(dtype=np.float64)
    sigma = frames.std(dtype=np.float64)
    if sigma == 0:
        raise ZeroVariance("constant scan has no global-normalized form")
    return ((frames - mu) / sigma).astype(np.float32)


def voxel_normalize(frames: np.ndarray) -> np.ndarray:
    """Per-voxel z-score across time; constant voxels map to all-zeros."""
    if frames.shape[0] < 2:
        raise DegenerateScan("voxel normalization needs T >= 2")
    mu = frames.mean(axis=0, dtype=np.float64)
    sigma = frames.std(axis=0, dtype=np.float64)
    out = np.zeros_like(frames, dtype=np.float64)
    nz = sigma > 0
    out[:, nz] = (frames[:, nz] - mu[nz]) / sigma[nz]
    return out.astype(np.float32)


def normalize_scan(scan: Scan4D, input_mode: str = "two_channel") -> NormalizedScan:
    """Build the 2-channel representation the model consumes.

    T=1 scans get an all-zero voxel channel (a single sample has no temporal
    std). With ``input_mode="global_only"`` the voxel channel is replaced by
    a copy of the global one, preserving tensor shapes.
    """
    g = global_normalize(scan.frames)
    if scan.n_frames == 1:
        v = np.zeros_like(g)
    else:
        v = voxel_normalize(scan.frames)
    if scan.anatomy is not None:
        anatomy = scan.anatomy
    elif scan.n_frames == 1:
        raise DegenerateScan("T=1 scan requires a stored anatomy mask")
    else:
        anatomy = infer_anatomy_mask(scan)
    second = g if input_mode == "global_only" else v
    combined = np.stack([g, second], axis=1)
    return NormalizedScan(subject_id=scan.subject_id, global_norm=g, voxel_norm=v,
                          combined=combined, anatomy=anatomy)


def intensity_mask(voxel_norm_window: np.ndarray, anatomy: np.ndarray,
                   quantile: float = 0.8) -> np.ndarray:
    """Keep anatomy voxels whose |voxel-norm| reaches the top (1 - quantile)
    share across the whole window; values tied with the threshold are kept.

    The threshold is the (floor(q*N) + 1)-th smallest of the N absolute
    values inside the anatomy, so exactly ceil((1-q)*N) voxels survive when
    values are distinct.
    """
    if anatomy.sum() == 0:
        raise EmptyAnatomy("intensity mask needs at least one anatomy voxel")
    if not 0.0 <= quantile < 1.0:
        raise ValueError(f"quantile must be in [0, 1), got {quantile}")
    w = voxel_norm_window.shape[0]
    region = np.broadcast_to(anatomy, voxel_norm_window.shape)
    values = np.abs(voxel_norm_window[region])
    idx = min(int(np.floor(quantile * values.size)), values.size - 1)
    threshold = np.partition(values, idx)[idx]
    return (np.abs(voxel_norm_window) >= threshold) & region


def extract_windows(norm: NormalizedScan, plan: WindowPlan,
                    quantile: float = 0.8) -> list[WindowBatch]:
    """All sub-sequences of length w at stride s, with per-window masks."""
    if plan.window < 1 or plan.stride < 1:
        raise ValueError("window and stride must be >= 1")
    t = norm.n_frames
    if t < plan.window:
        raise WindowTooLong(f"scan has {t} frames but the window needs {plan.window}")
    batches = []
    for start in plan.starts(t):
        stop = start + plan.window
        inputs = norm.combined[start:stop]
        target = norm.global_norm[start:stop, None]
        mask = intensity_mask(norm.voxel_norm[start:stop], norm.anatomy, quantile)
        batches.append(WindowBatch(inputs=inputs, target=target,
                                   intensity_mask=mask, start=start,
                                   scan_id=norm.subject_id))
    return batches
