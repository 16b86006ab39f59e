"""Architecture configuration and per-stage shape accounting.

The encoder applies three stride-2 stages to the input extents and a
reduce block to 2 channels, so the latent width is always
2 * prod(extents after three halvings); the canonical 75x93x81 input gives
2 * 10 * 12 * 11 = 2640. Toy configs keep the same construction at smaller
scale.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from typing import Optional

from ..errors import ConfigMismatch

# conventions that affect numerics, folded into the fingerprint
CONVENTIONS = {
    "transformer_norm": "post_ln",
    "positional_encoding": "learned",
    "ff_activation": "gelu",
    "upsample": "trilinear_cell_centers",
    "residual_blocks": "preactivation_identity_skip",
}


def halved(extent: int) -> int:
    """Output extent of a stride-2, k=3, padding-1 convolution."""
    return (extent + 1) // 2


def pick_groups(channels: int, cap: int = 8) -> int:
    """Largest group count <= cap that divides the channel count."""
    for g in range(min(cap, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


@dataclass(frozen=True)
class ArchConfig:
    extents: tuple[int, int, int]
    in_channels: int = 2
    stage_widths: tuple[int, int, int, int] = (4, 8, 16, 32)
    stage_repeats: tuple[int, int, int, int] = (1, 2, 2, 4)
    reduce_channels: int = 2
    transformer_layers: int = 2
    heads: int = 8
    ff_multiplier: int = 4
    window: int = 20
    dropout_p: float = 0.1
    lrelu_slope: float = 0.01
    groupnorm_eps: float = 1e-5
    task: Optional[str] = None  # None, "classification" or "regression"
    num_classes: int = 0

    def __post_init__(self):
        if len(self.extents) != 3:
            raise ConfigMismatch(f"extents must be 3-d, got {self.extents}")
        if self.task == "classification" and self.num_classes < 2:
            raise ConfigMismatch("classification needs num_classes >= 2")
        if self.latent_dim % self.heads != 0:
            raise ConfigMismatch(
                f"latent width {self.latent_dim} not divisible by {self.heads} heads")

    @property
    def stage_extents(self) -> list[tuple[int, int, int]]:
        """Spatial extents entering each stage: full, /2, /4, /8."""
        shapes = [tuple(self.extents)]
        for _ in range(3):
            shapes.append(tuple(halved(e) for e in shapes[-1]))
        return shapes

    @property
    def latent_dim(self) -> int:
        w, h, d = self.stage_extents[-1]
        return self.reduce_channels * w * h * d

    @property
    def max_seq(self) -> int:
        return self.window + 1  # CLS slot

    @property
    def ff_width(self) -> int:
        return self.ff_multiplier * self.latent_dim

    def with_task(self, task: str, num_classes: int = 0) -> "ArchConfig":
        return replace(self, task=task, num_classes=num_classes)

    def to_dict(self) -> dict:
        return {
            "extents": list(self.extents),
            "in_channels": self.in_channels,
            "stage_widths": list(self.stage_widths),
            "stage_repeats": list(self.stage_repeats),
            "reduce_channels": self.reduce_channels,
            "transformer_layers": self.transformer_layers,
            "heads": self.heads,
            "ff_multiplier": self.ff_multiplier,
            "window": self.window,
            "dropout_p": self.dropout_p,
            "lrelu_slope": self.lrelu_slope,
            "groupnorm_eps": self.groupnorm_eps,
            "task": self.task,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            extents=tuple(d["extents"]),
            in_channels=int(d.get("in_channels", 2)),
            stage_widths=tuple(d.get("stage_widths", (4, 8, 16, 32))),
            stage_repeats=tuple(d.get("stage_repeats", (1, 2, 2, 4))),
            reduce_channels=int(d.get("reduce_channels", 2)),
            transformer_layers=int(d.get("transformer_layers", 2)),
            heads=int(d.get("heads", 8)),
            ff_multiplier=int(d.get("ff_multiplier", 4)),
            window=int(d.get("window", 20)),
            dropout_p=float(d.get("dropout_p", 0.1)),
            lrelu_slope=float(d.get("lrelu_slope", 0.01)),
            groupnorm_eps=float(d.get("groupnorm_eps", 1e-5)),
            task=d.get("task"),
            num_classes=int(d.get("num_classes", 0)),
        )

    def canonical_json(self) -> str:
        return json.dumps({"arch": self.to_dict(), "conventions": CONVENTIONS},
                          sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def canonical_config(**overrides) -> ArchConfig:
    """The full-scale configuration matching the reference stage table."""
    return ArchConfig(extents=(75, 93, 81), **overrides)


def toy_config(extents=(16, 16, 16), window: int = 8, heads: int = 4,
               stage_widths=(2, 4, 8, 16), dropout_p: float = 0.1, **overrides) -> ArchConfig:
    return ArchConfig(extents=tuple(extents), window=window, heads=heads,
                      stage_widths=tuple(stage_widths), dropout_p=dropout_p, **overrides)


def encoder_stage_shapes(cfg: ArchConfig) -> list[tuple[str, tuple[int, ...]]]:
    """(stage name, output (C, W, H, D)) for every encoder table row."""
    e = cfg.stage_extents
    w = cfg.stage_widths
    rows: list[tuple[str, tuple[int, ...]]] = []
    rows.append(("input", (cfg.in_channels,) + e[0]))
    rows.append(("conv_block", (w[0],) + e[0]))
    rows.append(("regular_block_1", (w[0],) + e[0]))
    rows.append(("down_block_1", (w[1],) + e[1]))
    rows.append(("regular_block_2", (w[1],) + e[1]))
    rows.append(("down_block_2", (w[2],) + e[2]))
    rows.append(("regular_block_3", (w[2],) + e[2]))
    rows.append(("down_block_3", (w[3],) + e[3]))
    rows.append(("regular_block_4", (w[3],) + e[3]))
    rows.append(("reduce_block", (cfg.reduce_channels,) + e[3]))
    rows.append(("flatten", (cfg.latent_dim,)))
    return rows


def decoder_stage_shapes(cfg: ArchConfig) -> list[tuple[str, tuple[int, ...]]]:
    e = cfg.stage_extents
    w = cfg.stage_widths
    rows: list[tuple[str, tuple[int, ...]]] = []
    rows.append(("input", (cfg.latent_dim,)))
    rows.append(("linear_block", (cfg.latent_dim,)))
    rows.append(("expand_dim", (w[3],) + e[3]))
    rows.append(("up_block_1", (w[2],) + e[2]))
    rows.append(("regular_block_1", (w[2],) + e[2]))
    rows.append(("up_block_2", (w[1],) + e[1]))
    rows.append(("regular_block_2", (w[1],) + e[1]))
    rows.append(("up_block_3", (w[0],) + e[0]))
    rows.append(("regular_block_3", (w[0],) + e[0]))
    rows.append(("final_block", (1,) + e[0]))
    return rows
