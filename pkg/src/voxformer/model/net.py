"""The full network: conv encoder, transformer with CLS token, conv decoder,
task head, and the frozen perceptual feature stack.

All learnable parameters live in one insertion-ordered name -> Tensor dict;
the forward methods below are pure functions of (parameters, input, rng).
Regular blocks are pre-activation residual blocks (GroupNorm, LReLU, Conv,
twice, plus identity skip).
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .. import numerics as nx
from ..errors import ConfigMismatch, SequenceTooLong, ShapeMismatch
from ..numerics import RngState, Tensor
from .config import ArchConfig, pick_groups

SURROGATE_SEED = 7_777_777  # fixed: the perceptual stack never depends on the run seed
SURROGATE_WIDTHS = (8, 16)


class Model:
    def __init__(self, cfg: ArchConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.rng = RngState(seed)
        self.phase = "init"
        self.params: dict[str, Tensor] = {}
        self._init_rng = self.rng.spawn("init")
        self._build_encoder()
        self._build_transformer()
        self._build_decoder()
        if cfg.task is not None:
            self._build_head()
        self._build_surrogate()

    # ------------------------------------------------------------------
    # parameter construction
    # ------------------------------------------------------------------

    def _param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data.astype(self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _kaiming(self, name: str, shape: tuple, fan_in: int) -> Tensor:
        gain = math.sqrt(2.0 / (1.0 + self.cfg.lrelu_slope**2))
        return self._param(name, self._init_rng.normal(shape, std=gain / math.sqrt(fan_in),
                                                       dtype=np.float64))

    def _zeros(self, name: str, shape: tuple) -> Tensor:
        return self._param(name, np.zeros(shape))

    def _ones(self, name: str, shape: tuple) -> Tensor:
        return self._param(name, np.ones(shape))

    def _conv(self, prefix: str, cin: int, cout: int, k: int = 3) -> None:
        self._kaiming(f"{prefix}.w", (cout, cin, k, k, k), cin * k**3)
        self._zeros(f"{prefix}.b", (cout,))

    def _norm_affine(self, prefix: str, c: int) -> None:
        self._ones(f"{prefix}.gamma", (c,))
        self._zeros(f"{prefix}.beta", (c,))

    def _res_block_params(self, prefix: str, c: int) -> None:
        self._norm_affine(f"{prefix}.gn1", c)
        self._conv(f"{prefix}.conv1", c, c)
        self._norm_affine(f"{prefix}.gn2", c)
        self._conv(f"{prefix}.conv2", c, c)

    def _build_encoder(self) -> None:
        cfg = self.cfg
        w = cfg.stage_widths
        self._conv("encoder.conv_in", cfg.in_channels, w[0])
        for r in range(cfg.stage_repeats[0]):
            self._res_block_params(f"encoder.stage0.res{r}", w[0])
        for s in (1, 2, 3):
            self._conv(f"encoder.down{s}", w[s - 1], w[s])
            for r in range(cfg.stage_repeats[s]):
                self._res_block_params(f"encoder.stage{s}.res{r}", w[s])
        self._norm_affine("encoder.reduce.gn", w[3])
        self._conv("encoder.reduce.conv", w[3], cfg.reduce_channels)

    def _build_transformer(self) -> None:
        cfg = self.cfg
        d = cfg.latent_dim
        init = self._init_rng
        self._param("transformer.cls", init.normal((d,), std=0.02, dtype=np.float64))
        # position must be salient next to unnormalized frame features, or
        # frequency-like temporal patterns sit behind a long plateau
        self._param("transformer.pos", init.normal((cfg.max_seq, d), std=1.0, dtype=np.float64))
        self._norm_affine("transformer.emb_ln", d)
        for i in range(cfg.transformer_layers):
            p = f"transformer.layer{i}"
            for proj in ("wq", "wk", "wv", "wo"):
                self._kaiming(f"{p}.{proj}", (d, d), d)
            for bias in ("bq", "bk", "bv", "bo"):
                self._zeros(f"{p}.{bias}", (d,))
            self._norm_affine(f"{p}.ln1", d)
            self._kaiming(f"{p}.ff1.w", (cfg.ff_width, d), d)
            self._zeros(f"{p}.ff1.b", (cfg.ff_width,))
            self._kaiming(f"{p}.ff2.w", (d, cfg.ff_width), cfg.ff_width)
            self._zeros(f"{p}.ff2.b", (d,))
            self._norm_affine(f"{p}.ln2", d)

    def _build_decoder(self) -> None:
        cfg = self.cfg
        w = cfg.stage_widths
        d = cfg.latent_dim
        self._kaiming("decoder.linear.w", (d, d), d)
        self._zeros("decoder.linear.b", (d,))
        self._norm_affine("decoder.expand.gn", cfg.reduce_channels)
        self._conv("decoder.expand.conv", cfg.reduce_channels, w[3])
        for i, (c_in, c_out) in enumerate(((w[3], w[2]), (w[2], w[1]), (w[1], w[0])), start=1):
            self._conv(f"decoder.up{i}.conv", c_in, c_out, k=1)
            self._res_block_params(f"decoder.up{i}.res", c_out)
        self._conv("decoder.final.conv1", w[0], w[0])
        self._conv("decoder.final.conv2", w[0], 1, k=1)

    def _build_head(self) -> None:
        cfg = self.cfg
        if cfg.task not in ("classification", "regression"):
            raise ConfigMismatch(f"unknown task kind {cfg.task!r}")
        out = cfg.num_classes if cfg.task == "classification" else 1
        self._kaiming("head.w", (out, cfg.latent_dim), cfg.latent_dim)
        self._zeros("head.b", (out,))

    def _build_surrogate(self) -> None:
        init = RngState(SURROGATE_SEED).spawn("surrogate")
        gain = math.sqrt(2.0)
        c1, c2 = SURROGATE_WIDTHS
        shapes = {
            "surrogate.conv1.w": ((c1, 1, 3, 3), 9),
            "surrogate.conv2.w": ((c2, c1, 3, 3), c1 * 9),
        }
        for name, (shape, fan_in) in shapes.items():
            self._param(name, init.normal(shape, std=gain / math.sqrt(fan_in), dtype=np.float64))
            self._zeros(name.replace(".w", ".b"), (shape[0],))
        for name in self.surrogate_param_names():
            self.params[name].requires_grad = False  # frozen, never optimized

    # ------------------------------------------------------------------
    # parameter access
    # ------------------------------------------------------------------

    def surrogate_param_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("surrogate.")]

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if not n.startswith("surrogate.")}

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def ensure_head(self, task: str, num_classes: int = 0) -> None:
        """Attach the task head, updating config and fingerprint."""
        if "head.w" in self.params:
            if self.cfg.task == task and (task != "classification"
                                          or self.cfg.num_classes == num_classes):
                return
            del self.params["head.w"], self.params["head.b"]
        self.cfg = self.cfg.with_task(task, num_classes)
        self._build_head()

    def load_surrogate_weights(self, path) -> None:
        """Optional hook: replace the seeded perceptual stack with external weights."""
        data = np.load(path)
        for key in ("conv1.w", "conv1.b", "conv2.w", "conv2.b"):
            name = f"surrogate.{key}"
            if key not in data:
                raise KeyError(f"surrogate weights file is missing {key!r}")
            if tuple(data[key].shape) != self.params[name].shape:
                raise ShapeMismatch(
                    f"{key}: expected {self.params[name].shape}, got {data[key].shape}")
            self.params[name].data = data[key].astype(self.dtype)

    # ------------------------------------------------------------------
    # forward building blocks
    # ------------------------------------------------------------------

    def _res_block(self, x: Tensor, prefix: str, train: bool, rng: Optional[RngState]) -> Tensor:
        p = self.params
        cfg = self.cfg
        c = p[f"{prefix}.gn1.gamma"].shape[0]
        groups = pick_groups(c)
        h = nx.group_norm(x, groups, p[f"{prefix}.gn1.gamma"], p[f"{prefix}.gn1.beta"],
                          eps=cfg.groupnorm_eps)
        h = nx.leaky_relu(h, cfg.lrelu_slope)
        h = nx.conv3d(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"], stride=1, padding=1)
        h = nx.group_norm(h, groups, p[f"{prefix}.gn2.gamma"], p[f"{prefix}.gn2.beta"],
                          eps=cfg.groupnorm_eps)
        h = nx.leaky_relu(h, cfg.lrelu_slope)
        h = nx.conv3d(h, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"], stride=1, padding=1)
        return nx.add(x, h)

    def encode_frames(self, frames: Tensor, train: bool = False,
                      rng: Optional[RngState] = None) -> Tensor:
        """(N, 2, W, H, D) -> (N, latent_dim), each frame independently."""
        cfg = self.cfg
        if frames.shape[1:] != (cfg.in_channels,) + tuple(cfg.extents):
            raise ShapeMismatch(
                f"encoder expects (N, {cfg.in_channels}, {cfg.extents}), got {frames.shape}")
        p = self.params
        x = nx.conv3d(frames, p["encoder.conv_in.w"], p["encoder.conv_in.b"],
                      stride=1, padding=1)
        x = nx.dropout(x, cfg.dropout_p, rng, train)
        for r in range(cfg.stage_repeats[0]):
            x = self._res_block(x, f"encoder.stage0.res{r}", train, rng)
        for s in (1, 2, 3):
            x = nx.dropout(x, cfg.dropout_p, rng, train)
            x = nx.conv3d(x, p[f"encoder.down{s}.w"], p[f"encoder.down{s}.b"],
                          stride=2, padding=1)
            for r in range(cfg.stage_repeats[s]):
                x = self._res_block(x, f"encoder.stage{s}.res{r}", train, rng)
        groups = pick_groups(cfg.stage_widths[3])
        x = nx.group_norm(x, groups, p["encoder.reduce.gn.gamma"], p["encoder.reduce.gn.beta"],
                          eps=cfg.groupnorm_eps)
        x = nx.leaky_relu(x, cfg.lrelu_slope)
        x = nx.conv3d(x, p["encoder.reduce.conv.w"], p["encoder.reduce.conv.b"],
                      stride=1, padding=1)
        return nx.flatten(x)

    def transform_sequence(self, vectors: Tensor, with_cls: bool = True,
                           train: bool = False, rng: Optional[RngState] = None) -> Tensor:
        """(B, L, d) -> (B, L(+1), d); output index 0 is the CLS embedding."""
        cfg = self.cfg
        p = self.params
        b, length, d = vectors.shape
        if d != cfg.latent_dim:
            raise ShapeMismatch(f"sequence width {d} != latent width {cfg.latent_dim}")
        total = length + (1 if with_cls else 0)
        if total > cfg.max_seq:
            raise SequenceTooLong(f"sequence of {total} exceeds maximum {cfg.max_seq}")
        h = vectors
        if with_cls:
            cls = nx.reshape(p["transformer.cls"], (1, 1, d))
            h = nx.concat([nx.broadcast_to(cls, (b, 1, d)), h], axis=1)
        pos = nx.slice_axis(p["transformer.pos"], 0, 0, total)
        h = nx.add(h, pos)
        h = nx.layer_norm(h, p["transformer.emb_ln.gamma"], p["transformer.emb_ln.beta"])
        h = nx.dropout(h, cfg.dropout_p, rng, train)
        for i in range(cfg.transformer_layers):
            lp = f"transformer.layer{i}"
            mha_params = {k: p[f"{lp}.{k}"] for k in
                          ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}
            attn = nx.multi_head_attention(h, mha_params, cfg.heads,
                                           dropout_p=cfg.dropout_p, rng=rng, train=train)
            h = nx.layer_norm(nx.add(h, nx.dropout(attn, cfg.dropout_p, rng, train)),
                              p[f"{lp}.ln1.gamma"], p[f"{lp}.ln1.beta"])
            ff = nx.linear(h, p[f"{lp}.ff1.w"], p[f"{lp}.ff1.b"])
            ff = nx.gelu(ff)
            ff = nx.linear(ff, p[f"{lp}.ff2.w"], p[f"{lp}.ff2.b"])
            h = nx.layer_norm(nx.add(h, nx.dropout(ff, cfg.dropout_p, rng, train)),
                              p[f"{lp}.ln2.gamma"], p[f"{lp}.ln2.beta"])
        return h

    def decode_latents(self, z: Tensor, train: bool = False,
                       rng: Optional[RngState] = None) -> Tensor:
        """(N, latent_dim) -> (N, 1, W, H, D) at the encoder's input extents."""
        cfg = self.cfg
        p = self.params
        if z.shape[-1] != cfg.latent_dim:
            raise ShapeMismatch(f"decoder expects width {cfg.latent_dim}, got {z.shape}")
        e = cfg.stage_extents
        w = cfg.stage_widths
        h = nx.linear(z, p["decoder.linear.w"], p["decoder.linear.b"])
        h = nx.reshape(h, (z.shape[0], cfg.reduce_channels) + e[3])
        h = nx.group_norm(h, pick_groups(cfg.reduce_channels),
                          p["decoder.expand.gn.gamma"], p["decoder.expand.gn.beta"],
                          eps=cfg.groupnorm_eps)
        h = nx.leaky_relu(h, cfg.lrelu_slope)
        h = nx.conv3d(h, p["decoder.expand.conv.w"], p["decoder.expand.conv.b"],
                      stride=1, padding=1)
        for i, target in enumerate((e[2], e[1], e[0]), start=1):
            h = nx.conv3d(h, p[f"decoder.up{i}.conv.w"], p[f"decoder.up{i}.conv.b"])
            h = nx.upsample_to(h, target)
            h = self._res_block(h, f"decoder.up{i}.res", train, rng)
        h = nx.conv3d(h, p["decoder.final.conv1.w"], p["decoder.final.conv1.b"],
                      stride=1, padding=1)
        return nx.conv3d(h, p["decoder.final.conv2.w"], p["decoder.final.conv2.b"])

    def head_forward(self, cls_embedding: Tensor) -> Tensor:
        if "head.w" not in self.params:
            raise ConfigMismatch("no task head configured; call ensure_head first")
        return nx.linear(cls_embedding, self.params["head.w"], self.params["head.b"])

    def perceptual_features(self, slices: Tensor) -> tuple[Tensor, Tensor]:
        """Feature maps of the two frozen conv layers for (M, 1, Hs, Ws) slices."""
        p = self.params
        f1 = nx.conv2d(slices, p["surrogate.conv1.w"], p["surrogate.conv1.b"],
                       stride=1, padding=1)
        h = nx.leaky_relu(f1, self.cfg.lrelu_slope)
        f2 = nx.conv2d(h, p["surrogate.conv2.w"], p["surrogate.conv2.b"],
                       stride=1, padding=1)
        return f1, f2

    # ------------------------------------------------------------------
    # composite paths
    # ------------------------------------------------------------------

    def stage1_forward(self, frames: Tensor, train: bool = False,
                       rng: Optional[RngState] = None) -> Tensor:
        """Per-frame autoencoding: no transformer, no temporal information."""
        z = self.encode_frames(frames, train, rng)
        return self.decode_latents(z, train, rng)

    def stage2_forward(self, windows: Tensor, train: bool = False,
                       rng: Optional[RngState] = None) -> Tensor:
        """(B, w, 2, ...) -> (B, w, 1, ...); CLS position is not reconstructed."""
        cfg = self.cfg
        b, w = windows.shape[:2]
        frames = nx.reshape(windows, (b * w,) + windows.shape[2:])
        z = nx.reshape(self.encode_frames(frames, train, rng), (b, w, cfg.latent_dim))
        h = self.transform_sequence(z, with_cls=True, train=train, rng=rng)
        h = nx.slice_axis(h, 1, 1, w + 1)
        recon = self.decode_latents(nx.reshape(h, (b * w, cfg.latent_dim)), train, rng)
        return nx.reshape(recon, (b, w) + recon.shape[1:])

    def classify_windows(self, windows: Tensor, train: bool = False,
                         rng: Optional[RngState] = None) -> Tensor:
        """(B, w, 2, ...) -> head outputs (B, c) or (B, 1) from the CLS embedding."""
        cfg = self.cfg
        b, w = windows.shape[:2]
        frames = nx.reshape(windows, (b * w,) + windows.shape[2:])
        z = nx.reshape(self.encode_frames(frames, train, rng), (b, w, cfg.latent_dim))
        h = self.transform_sequence(z, with_cls=True, train=train, rng=rng)
        cls = nx.reshape(nx.slice_axis(h, 1, 0, 1), (b, cfg.latent_dim))
        return self.head_forward(cls)
