"""Deterministic random streams.

Every stochastic component (init, dropout, shuffling, synthetic data) draws
from an RngState. Identical seed plus identical call sequence gives
bit-identical draws; streams for independent purposes are derived with
``spawn`` so adding draws to one consumer never shifts another.
"""

from __future__ import annotations

import hashlib

import numpy as np


class RngState:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: str) -> "RngState":
        """Derive an independent child stream named by ``key``."""
        digest = hashlib.sha256(f"{self.seed}/{key}".encode()).digest()
        return RngState(int.from_bytes(digest[:8], "little"))

    def normal(self, shape, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self._gen.standard_normal(size=shape) * std).astype(dtype)

    def uniform(self, shape, dtype=np.float32) -> np.ndarray:
        return self._gen.random(size=shape).astype(dtype)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, values, size=None, replace=True):
        return self._gen.choice(values, size=size, replace=replace)

    def state_dict(self) -> dict:
        st = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "state": str(st["state"]["state"]),
            "inc": str(st["state"]["inc"]),
            "has_uint32": st["has_uint32"],
            "uinteger": st["uinteger"],
        }

    def load_state_dict(self, d: dict) -> None:
        self.seed = int(d["seed"])
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        st = self._gen.bit_generator.state
        st["state"]["state"] = int(d["state"])
        st["state"]["inc"] = int(d["inc"])
        st["has_uint32"] = d["has_uint32"]
        st["uinteger"] = d["uinteger"]
        self._gen.bit_generator.state = st
