from .config import (
    ArchConfig,
    canonical_config,
    decoder_stage_shapes,
    encoder_stage_shapes,
    pick_groups,
    toy_config,
)
from .net import Model
from .state import load_checkpoint, restore_optimizer, save_checkpoint

__all__ = [
    "ArchConfig",
    "Model",
    "canonical_config",
    "decoder_stage_shapes",
    "encoder_stage_shapes",
    "load_checkpoint",
    "pick_groups",
    "restore_optimizer",
    "save_checkpoint",
    "toy_config",
]
