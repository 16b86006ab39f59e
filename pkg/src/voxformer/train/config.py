"""Training configuration, serialized as plain JSON."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

from ..errors import ConfigMismatch

PHASES = ("stage1", "stage2", "finetune")
INPUT_MODES = ("two_channel", "global_only")
SCHEDULES = ("two_step", "one_step")


@dataclass
class TrainConfig:
    phase: str = "stage1"
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 8            # frames for stage 1, windows otherwise
    max_epochs: int = 10
    patience: int = 30
    use_l1: bool = True
    use_intensity: bool = True
    use_perceptual: bool = True
    input_mode: str = "two_channel"
    schedule: str = "two_step"
    window: int = 20
    stride: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigMismatch(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.input_mode not in INPUT_MODES:
            raise ConfigMismatch(f"input_mode must be one of {INPUT_MODES}")
        if self.schedule not in SCHEDULES:
            raise ConfigMismatch(f"schedule must be one of {SCHEDULES}")
        if self.phase != "finetune" and not (self.use_l1 or self.use_intensity
                                             or self.use_perceptual):
            raise ConfigMismatch("pretraining needs at least one enabled loss")
        if self.window < 1 or self.stride < 1:
            raise ConfigMismatch("window and stride must be >= 1")

    def for_phase(self, phase: str, **overrides) -> "TrainConfig":
        return replace(self, phase=phase, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f: d[f] for f in cls.__dataclass_fields__ if f in d}
        return cls(**known)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def fingerprint(self, arch_fingerprint: str = "") -> str:
        blob = json.dumps({"train": self.to_dict(), "arch": arch_fingerprint},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
