from .config import TrainConfig
from .data import PreparedScan, PreparedSplit, prepare_dataset, prepare_split, stack_windows
from .loop import TrainLog, early_stop, finetune, pretrain_stage1, pretrain_stage2
from .losses import (
    cce_loss,
    loss_intensity,
    loss_l1,
    loss_perceptual,
    mse_loss,
    pretrain_total,
    volume_to_slices,
)

__all__ = [
    "PreparedScan",
    "PreparedSplit",
    "TrainConfig",
    "TrainLog",
    "cce_loss",
    "early_stop",
    "finetune",
    "loss_intensity",
    "loss_l1",
    "loss_perceptual",
    "mse_loss",
    "prepare_dataset",
    "prepare_split",
    "pretrain_stage1",
    "pretrain_stage2",
    "pretrain_total",
    "stack_windows",
    "volume_to_slices",
]
