"""Pretraining losses (L1, masked intensity L1, perceptual) and task losses.

The intensity loss restricts the L1 to voxels whose absolute voxel-normalized
value clears the per-window quantile threshold; the perceptual loss compares
frozen shallow feature maps of depth-axis slices of reconstruction and target.
"""

from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..errors import ShapeMismatch
from ..numerics import Tensor


def loss_l1(recon: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference over all elements."""
    if recon.shape != target.shape:
        raise ShapeMismatch(f"l1: {recon.shape} vs {target.shape}")
    return nx.mean(nx.absolute(nx.sub(recon, target)))


def loss_intensity(recon: Tensor, target: Tensor, mask: np.ndarray) -> Tensor:
    """Mean absolute difference over mask-true positions; 0 on an empty mask."""
    if recon.shape != target.shape:
        raise ShapeMismatch(f"intensity: {recon.shape} vs {target.shape}")
    mask_b = np.broadcast_to(mask, recon.shape)
    count = int(mask_b.sum())
    if count == 0:
        return nx.scale(nx.sum_(recon), 0.0)  # exact zero, zero gradient
    masked = nx.mul(nx.absolute(nx.sub(recon, target)),
                    Tensor(mask_b.astype(recon.dtype)))
    return nx.scale(nx.sum_(masked), 1.0 / count)


def volume_to_slices(volume: Tensor) -> Tensor:
    """(N, 1, W, H, D) -> (N*D, 1, W, H): batch of 2-D slices along depth."""
    n, c, w, h, d = volume.shape
    perm = nx.transpose(volume, (0, 4, 1, 2, 3))
    return nx.reshape(perm, (n * d, c, w, h))


def loss_perceptual(recon: Tensor, target: Tensor, model) -> Tensor:
    """Summed mean-squared distances of the two frozen feature maps,
    mean-pooled across slice pairs."""
    if recon.shape != target.shape:
        raise ShapeMismatch(f"perceptual: {recon.shape} vs {target.shape}")
    r1, r2 = model.perceptual_features(volume_to_slices(recon))
    t1, t2 = model.perceptual_features(volume_to_slices(target))
    d1 = nx.sub(r1, t1)
    d2 = nx.sub(r2, t2)
    return nx.add(nx.mean(nx.mul(d1, d1)), nx.mean(nx.mul(d2, d2)))


def pretrain_total(recon: Tensor, target: Tensor, mask: np.ndarray, model,
                   use_l1: bool = True, use_intensity: bool = True,
                   use_perceptual: bool = True) -> tuple[Tensor, dict]:
    """Total reconstruction objective; disabled terms contribute exactly 0."""
    terms: dict[str, float] = {}
    total = None
    if use_l1:
        t = loss_l1(recon, target)
        terms["l1"] = float(t.data)
        total = t
    if use_intensity:
        t = loss_intensity(recon, target, mask)
        terms["intensity"] = float(t.data)
        total = t if total is None else nx.add(total, t)
    if use_perceptual:
        t = loss_perceptual(recon, target, model)
        terms["perceptual"] = float(t.data)
        total = t if total is None else nx.add(total, t)
    if total is None:
        raise ValueError("at least one pretraining loss must be enabled")
    terms["total"] = float(total.data)
    return total, terms


def cce_loss(logits: Tensor, label_indices: np.ndarray) -> Tensor:
    """Softmax + categorical cross-entropy, averaged over the batch."""
    n, c = logits.shape
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), label_indices] = 1.0
    picked = nx.mul(nx.log_softmax(logits), Tensor(onehot))
    return nx.scale(nx.sum_(picked), -1.0 / n)


def mse_loss(preds: Tensor, targets: np.ndarray) -> Tensor:
    t = Tensor(np.asarray(targets, dtype=preds.dtype).reshape(preds.shape))
    d = nx.sub(preds, t)
    return nx.mean(nx.mul(d, d))
