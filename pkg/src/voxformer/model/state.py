"""Binary checkpoint format.

Layout (little-endian): magic "TFFC", u32 version, length-prefixed
architecture fingerprint (hex) and phase tag, length-prefixed header JSON
(arch config, rng state, parameter count), a named f32 tensor table, an
optional optimizer-moment table with its step counter, and a trailing CRC32
over all preceding bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import (
    BadMagic,
    ChecksumMismatch,
    ConfigMismatch,
    TruncatedFile,
    VersionUnsupported,
)
from ..numerics.optim import AdamW
from .config import ArchConfig
from .net import Model

CKPT_MAGIC = b"TFFC"
CKPT_VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    out = bytearray()
    raw = name.encode("utf-8")
    out += struct.pack("<H", len(raw)) + raw
    out += struct.pack("<B", arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    out += arr.astype("<f4").tobytes(order="C")
    return bytes(out)


class _Reader:
    def __init__(self, raw: bytes, offset: int):
        self.raw = raw
        self.off = offset

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise TruncatedFile("checkpoint ends mid-record")
        chunk = self.raw[self.off:self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals

    def read_str(self) -> str:
        n = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def read_tensor(self) -> tuple[str, np.ndarray]:
        name_len = self.unpack("<H")
        name = self.take(name_len).decode("utf-8")
        ndim = self.unpack("<B")
        shape = tuple(struct.unpack(f"<{ndim}I", self.take(4 * ndim))) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, data.astype(np.float32)


def save_checkpoint(model: Model, path, optimizer: Optional[AdamW] = None) -> None:
    payload = bytearray()
    payload += CKPT_MAGIC
    payload += struct.pack("<I", CKPT_VERSION)
    payload += _pack_str(model.cfg.fingerprint())
    payload += _pack_str(model.phase)
    header = {
        "arch": model.cfg.to_dict(),
        "rng": model.rng.state_dict(),
        "param_count": model.parameter_count(),
    }
    payload += _pack_str(json.dumps(header, sort_keys=True))
    payload += struct.pack("<I", len(model.params))
    for name, p in model.params.items():
        payload += _pack_tensor(name, p.data)
    if optimizer is None:
        payload += struct.pack("<B", 0)
    else:
        payload += struct.pack("<B", 1)
        payload += struct.pack("<Q", optimizer.step_count)
        payload += struct.pack("<I", 2 * len(optimizer.m))
        for name in optimizer.m:
            payload += _pack_tensor(f"m.{name}", optimizer.m[name])
            payload += _pack_tensor(f"v.{name}", optimizer.v[name])
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(payload))


def load_checkpoint(path) -> tuple[Model, Optional[dict]]:
    """Rebuild the model; returns (model, moments) where moments is None or
    {"step": int, "m": {...}, "v": {...}} for optimizer resumption."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != CKPT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint")
    if len(raw) < 12:
        raise TruncatedFile(f"{path}: too short")
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc_stored:
        raise ChecksumMismatch(f"{path}: CRC32 mismatch")
    r = _Reader(raw, 4)
    version = r.unpack("<I")
    if version != CKPT_VERSION:
        raise VersionUnsupported(f"{path}: checkpoint version {version}")
    fingerprint = r.read_str()
    phase = r.read_str()
    header = json.loads(r.read_str())
    cfg = ArchConfig.from_dict(header["arch"])
    if cfg.fingerprint() != fingerprint:
        raise ConfigMismatch(f"{path}: fingerprint does not match stored architecture")
    model = Model(cfg, seed=int(header["rng"]["seed"]))
    model.rng.load_state_dict(header["rng"])
    model.phase = phase
    n_params = r.unpack("<I")
    seen = set()
    for _ in range(n_params):
        name, data = r.read_tensor()
        if name not in model.params:
            raise ConfigMismatch(f"{path}: unexpected parameter {name!r}")
        if model.params[name].shape != data.shape:
            raise ConfigMismatch(f"{path}: shape mismatch for {name!r}")
        model.params[name].data = data.copy()
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise ConfigMismatch(f"{path}: checkpoint is missing {sorted(missing)[:3]}...")
    moments = None
    if r.unpack("<B"):
        step = r.unpack("<Q")
        n = r.unpack("<I")
        m: dict = {}
        v: dict = {}
        for _ in range(n):
            name, data = r.read_tensor()
            (m if name.startswith("m.") else v)[name[2:]] = data.copy()
        moments = {"step": step, "m": m, "v": v}
    return model, moments


def restore_optimizer(model: Model, moments: dict, lr: float, weight_decay: float) -> AdamW:
    opt = AdamW(model.trainable_parameters(), lr=lr, weight_decay=weight_decay,
                frozen=("surrogate.",))
    opt.step_count = moments["step"]
    for name in opt.m:
        if name in moments["m"]:
            opt.m[name] = moments["m"][name].astype(np.float32)
            opt.v[name] = moments["v"][name].astype(np.float32)
    return opt
