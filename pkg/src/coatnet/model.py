"""Assembles configs into runnable networks.

Layout: channels-last [N, H, W, C] end to end. A conv stem halves the input
once; each of the four stage slots halves it again (total stride 32), the
classifier is LayerNorm -> global average pool -> linear. A patchify stem
(stride-4 token grid straight into transformer blocks) is the aggressive
single-stage alternative used by the layout comparison.
"""

from __future__ import annotations

import numpy as np

from .blocks import ConvBlock, MBConvBlock, MBConvCfg, TfmCfg, TransformerBlock
from .config import ModelConfig, validate_config
from .errors import ConfigError, ResolutionError, ShapeError
from .ops import conv2d, global_avg_pool, norm
from .tensor import Tensor, matmul, meta_alloc, trunc_normal, zeros

from .blocks import _conv, _norm_params, _conv_tensors, _norm_tensors  # shared initializers


class Model:
    def __init__(self, cfg: ModelConfig, seed: int, dtype=np.float32, meta: bool = False):
        validate_config(cfg)
        self.cfg = cfg
        self.dtype = dtype
        if meta:
            with meta_alloc():
                self._build(seed)
        else:
            self._build(seed)

    def _build(self, seed: int) -> None:
        cfg = self.cfg
        rng = np.random.default_rng(seed)
        dtype = self.dtype
        r = cfg.resolution

        if cfg.stem.kind == "patchify":
            self.stem_conv = _conv(4, 4, 3, cfg.stem.width, 4, rng, dtype)
            self.stem_blocks = []
        else:
            self.stem_conv = _conv(3, 3, 3, cfg.stem.width, 2, rng, dtype)
            self.stem_blocks = [
                ConvBlock(cfg.stem.width, cfg.stem.width, 1, cfg.norm_kind, rng, dtype)
                for _ in range(cfg.stem.depth - 1)]

        self.stages: list[list] = []
        width = cfg.stem.width
        for slot_idx, slot in enumerate(cfg.stages):
            grid = cfg.stage_grid(slot_idx)
            blocks = []
            first = cfg.stem.kind != "patchify"  # patchify stage never downsamples
            for seg in slot:
                for _ in range(seg.depth):
                    stride = 2 if first else 1
                    first = False
                    blocks.append(self._make_block(seg.kind, width, seg.width,
                                                   stride, grid, rng))
                    width = seg.width
            self.stages.append(blocks)

        self.head_norm = _norm_params("layer", width, dtype)
        self.head_w = trunc_normal((width, cfg.num_classes), 0.02, rng,
                                   dtype=dtype, requires_grad=True)
        self.head_b = zeros((cfg.num_classes,), dtype=dtype, requires_grad=True)

    def _make_block(self, kind, d_in, d_out, stride, grid, rng):
        cfg = self.cfg
        if kind == "mbconv":
            return MBConvBlock(MBConvCfg(d_in, d_out, stride,
                                         downsample_variant=cfg.downsample_variant,
                                         norm_kind=cfg.norm_kind), rng, self.dtype)
        if kind == "tfm_rel":
            return TransformerBlock(TfmCfg(d_in, d_out, head_dim=cfg.head_dim,
                                           stride=stride, attn_mode=cfg.attn_mode),
                                    grid, grid, rng, self.dtype)
        if kind == "conv":
            return ConvBlock(d_in, d_out, stride, cfg.norm_kind, rng, self.dtype)
        raise ConfigError(f"unknown block kind {kind!r}")

    # -- running the network --------------------------------------------------

    def forward(self, batch, training: bool = False, sd_key: tuple | None = None) -> Tensor:
        """Class logits [N, num_classes] for images [N, r, r, 3].

        `sd_key` seeds the per-block stochastic-depth streams and is required
        whenever training with a nonzero rate (reproducibility contract).
        """
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.dtype))
        if x.ndim != 4 or x.shape[3] != 3:
            raise ShapeError(f"expected [N, r, r, 3] images, got {x.shape}")
        if x.shape[1] != self.cfg.resolution or x.shape[2] != self.cfg.resolution:
            raise ResolutionError(
                f"model runs at {self.cfg.resolution}x{self.cfg.resolution}, got "
                f"{x.shape[1]}x{x.shape[2]}; use adapt_resolution for larger inputs")
        rate = self.cfg.stochastic_depth_rate if training else 0.0
        if rate > 0.0 and sd_key is None:
            raise ConfigError("training with stochastic depth needs an sd_key seed")
        if sd_key is not None and not isinstance(sd_key, (tuple, list)):
            sd_key = (int(sd_key),)

        x = conv2d(x, self.stem_conv)
        blk_idx = 0

        def run(block, x):
            nonlocal blk_idx
            rng = (np.random.default_rng(tuple(sd_key) + (blk_idx,))
                   if rate > 0.0 else None)
            blk_idx += 1
            return block.forward(x, training=training, sd_rate=rate, sd_rng=rng)

        for b in self.stem_blocks:
            x = run(b, x)
        for blocks in self.stages:
            for b in blocks:
                x = run(b, x)
        x = norm(x, self.head_norm, training)
        x = global_avg_pool(x)
        return matmul(x, self.head_w) + self.head_b

    # -- parameter plumbing ----------------------------------------------------

    def named_tensors(self):
        """All stateful tensors (trainable and norm running stats), stable order."""
        yield from _conv_tensors("stem.conv1", self.stem_conv)
        for i, b in enumerate(self.stem_blocks):
            for n, t in b.named_tensors():
                yield f"stem.block{i + 1}.{n}", t
        for s, blocks in enumerate(self.stages, start=1):
            for i, b in enumerate(blocks):
                for n, t in b.named_tensors():
                    yield f"s{s}.{i}.{n}", t
        yield from _norm_tensors("head.norm", self.head_norm)
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_tensors() if t.requires_grad]

    def param_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    # -- resolution adaptation ---------------------------------------------------

    def bias_table_extents(self) -> dict[str, tuple[int, int]]:
        """Per-stage relative-bias table extents (rows, cols), for reporting."""
        out = {}
        for s, blocks in enumerate(self.stages, start=1):
            for b in blocks:
                if isinstance(b, TransformerBlock) and b.bias_table is not None:
                    t = b.bias_table
                    out[f"s{s}"] = (2 * t.base_h - 1, 2 * t.base_w - 1)
                    break
        return out

    def adapt_resolution(self, new_res: int) -> "Model":
        """Grow every bias table to the grids implied by `new_res`.

        All other weights are untouched; the model subsequently runs at the
        new resolution. Equal resolution is a no-op; shrinking is refused.
        """
        cfg = self.cfg
        if new_res < cfg.resolution:
            raise ResolutionError(
                f"adaptation only enlarges: {cfg.resolution} -> {new_res} requested")
        if new_res % cfg.total_stride:
            raise ResolutionError(
                f"resolution {new_res} not divisible by total stride {cfg.total_stride}")
        if new_res == cfg.resolution:
            return self
        cfg.resolution = new_res
        for slot_idx, blocks in enumerate(self.stages):
            grid = cfg.stage_grid(slot_idx)
            for b in blocks:
                if isinstance(b, TransformerBlock):
                    b.adapt_grid(grid, grid)
        return self


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32, meta: bool = False) -> Model:
    return Model(cfg, seed=seed, dtype=dtype, meta=meta)
