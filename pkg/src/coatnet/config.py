"""Declarative model descriptions: stages, family registry, JSON round trip.

A model is a stem plus four stage slots (S1-S4). Each slot holds one or more
(kind, depth, width) segments; a single segment is the normal case, two
segments express the mixed MBConv+Transformer S3 of the largest family
members. The first block of a slot halves the spatial extents.

Config documents are JSON with schema tag ``coatnet-config/1``; field names
below are the public contract (see README).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .errors import ConfigError

STAGE_KINDS = ("conv", "mbconv", "tfm_rel")
STEM_KINDS = ("conv", "patchify")

CONFIG_SCHEMA = "coatnet-config/1"


@dataclass(frozen=True)
class StageSpec:
    kind: str
    depth: int
    width: int


@dataclass
class ModelConfig:
    stem: StageSpec                                  # kind "conv" or "patchify"
    stages: tuple[tuple[StageSpec, ...], ...]        # 4 slots (1 for patchify)
    num_classes: int
    resolution: int
    head_dim: int = 32
    norm_kind: str = "batch"                         # MBConv/Conv block norm
    attn_mode: str = "pre"                           # pre | post | none
    downsample_variant: str = "proj_pool"            # proj_pool | strided_dwconv
    stochastic_depth_rate: float = 0.0

    @property
    def total_stride(self) -> int:
        return 4 if self.stem.kind == "patchify" else 2 ** (1 + len(self.stages))

    def stage_grid(self, slot: int) -> int:
        """Feature-map extent inside stage slot `slot` (0-based S1..S4)."""
        if self.stem.kind == "patchify":
            return self.resolution // 4
        return self.resolution // (2 ** (slot + 2))

    @property
    def final_width(self) -> int:
        return self.stages[-1][-1].width


def validate_config(cfg: ModelConfig) -> None:
    if cfg.stem.kind not in STEM_KINDS:
        raise ConfigError(f"unknown stem kind {cfg.stem.kind!r}")
    if cfg.attn_mode not in ("pre", "post", "none"):
        raise ConfigError(f"unknown attention mode {cfg.attn_mode!r}")
    if cfg.norm_kind not in ("batch", "layer"):
        raise ConfigError(f"unknown norm kind {cfg.norm_kind!r}")
    if cfg.downsample_variant not in ("proj_pool", "strided_dwconv"):
        raise ConfigError(f"unknown downsample variant {cfg.downsample_variant!r}")
    if not 0.0 <= cfg.stochastic_depth_rate < 1.0:
        raise ConfigError("stochastic depth rate must be in [0, 1)")
    if cfg.num_classes < 2:
        raise ConfigError("need at least 2 classes")
    segments = [s for slot in cfg.stages for s in slot]
    if not segments:
        raise ConfigError("no stages")
    for s in segments + [cfg.stem]:
        if s.depth < 1 or s.width < 1:
            raise ConfigError(f"depth/width must be positive: {s}")
    for s in segments:
        if s.kind not in STAGE_KINDS:
            raise ConfigError(f"unknown stage kind {s.kind!r}")
    if cfg.stem.kind == "patchify":
        if len(cfg.stages) != 1 or any(s.kind != "tfm_rel" for s in segments):
            raise ConfigError("a patchify stem takes exactly one all-transformer stage")
        if cfg.resolution % 4:
            raise ConfigError("patchify models need resolution divisible by 4")
    else:
        if len(cfg.stages) != 4:
            raise ConfigError(f"expected 4 stage slots, got {len(cfg.stages)}")
        if cfg.resolution % cfg.total_stride:
            raise ConfigError(
                f"resolution {cfg.resolution} not divisible by total stride {cfg.total_stride}")
        seen_tfm = False
        for s in segments:
            if s.kind == "tfm_rel":
                seen_tfm = True
            elif seen_tfm:
                raise ConfigError(
                    "convolution stages must all come before transformer stages")
        if cfg.stages[0][0].kind == "tfm_rel":
            raise ConfigError("S1 cannot be a transformer stage (grid too large)")
        widths = [s.width for s in segments]
        if any(a > b for a, b in zip(widths, widths[1:])):
            raise ConfigError(f"stage widths must be non-decreasing, got {widths}")
    for s in segments:
        if s.kind == "tfm_rel" and s.width % cfg.head_dim:
            raise ConfigError(
                f"transformer width {s.width} not divisible by head size {cfg.head_dim}")


# -- JSON round trip --------------------------------------------------------

def config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "schema": CONFIG_SCHEMA,
        "stem": {"kind": cfg.stem.kind, "depth": cfg.stem.depth, "width": cfg.stem.width},
        "stages": [[{"kind": s.kind, "depth": s.depth, "width": s.width} for s in slot]
                   for slot in cfg.stages],
        "num_classes": cfg.num_classes,
        "resolution": cfg.resolution,
        "head_dim": cfg.head_dim,
        "norm_kind": cfg.norm_kind,
        "attn_mode": cfg.attn_mode,
        "downsample_variant": cfg.downsample_variant,
        "stochastic_depth_rate": cfg.stochastic_depth_rate,
    }


def config_from_dict(d: dict) -> ModelConfig:
    if d.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {d.get('schema')!r}")
    try:
        cfg = ModelConfig(
            stem=StageSpec(**d["stem"]),
            stages=tuple(tuple(StageSpec(**s) for s in slot) for slot in d["stages"]),
            num_classes=int(d["num_classes"]),
            resolution=int(d["resolution"]),
            head_dim=int(d.get("head_dim", 32)),
            norm_kind=d.get("norm_kind", "batch"),
            attn_mode=d.get("attn_mode", "pre"),
            downsample_variant=d.get("downsample_variant", "proj_pool"),
            stochastic_depth_rate=float(d.get("stochastic_depth_rate", 0.0)),
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed model config: {e}") from None
    validate_config(cfg)
    return cfg


def config_to_json(cfg: ModelConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)


def config_from_json(text: str) -> ModelConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return config_from_dict(d)


# -- family registry ---------------------------------------------------------

def _standard(widths, depths, *, head_dim=32, sd=0.0, num_classes=1000, resolution=224):
    """The C-C-T-T five-stage shape: conv stem, two MBConv and two
    transformer stages."""
    w0, w1, w2, w3, w4 = widths
    l0, l1, l2, l3, l4 = depths
    kinds = ("mbconv", "mbconv", "tfm_rel", "tfm_rel")
    return ModelConfig(
        stem=StageSpec("conv", l0, w0),
        stages=tuple((StageSpec(k, l, w),)
                     for k, l, w in zip(kinds, (l1, l2, l3, l4), (w1, w2, w3, w4))),
        num_classes=num_classes, resolution=resolution, head_dim=head_dim,
        stochastic_depth_rate=sd)


def _layout(kinds, depths, widths, stem_width, head_dim=16, num_classes=10, resolution=32):
    return ModelConfig(
        stem=StageSpec("conv", 2, stem_width),
        stages=tuple((StageSpec(k, l, w),) for k, l, w in zip(kinds, depths, widths)),
        num_classes=num_classes, resolution=resolution, head_dim=head_dim)


def _vit_rel(width, depth, num_classes=10, resolution=32, head_dim=16):
    return ModelConfig(
        stem=StageSpec("patchify", 1, width),
        stages=((StageSpec("tfm_rel", depth, width),),),
        num_classes=num_classes, resolution=resolution, head_dim=head_dim)


def _mixed_s3(widths, *, s2_depth, s3_mb, s3_tfm, head_dim, num_classes=1000, resolution=224):
    """The memory-balanced large shape: S3 holds an MBConv segment at half
    the transformer width followed by the transformer segment."""
    w0, w1, w2, w3mb, w3t, w4 = widths
    return ModelConfig(
        stem=StageSpec("conv", 2, w0),
        stages=(
            (StageSpec("mbconv", 2, w1),),
            (StageSpec("mbconv", s2_depth, w2),),
            (StageSpec("mbconv", s3_mb, w3mb), StageSpec("tfm_rel", s3_tfm, w3t)),
            (StageSpec("tfm_rel", 2, w4),),
        ),
        num_classes=num_classes, resolution=resolution, head_dim=head_dim)


def _families() -> dict:
    return {
        "coatnet-0": _standard((64, 96, 192, 384, 768), (2, 2, 3, 5, 2), sd=0.2),
        "coatnet-1": _standard((64, 96, 192, 384, 768), (2, 2, 6, 14, 2), sd=0.3),
        "coatnet-2": _standard((128, 128, 256, 512, 1024), (2, 2, 6, 14, 2), sd=0.5),
        "coatnet-3": _standard((192, 192, 384, 768, 1536), (2, 2, 6, 14, 2), sd=0.7),
        "coatnet-4": _standard((192, 192, 384, 768, 1536), (2, 2, 12, 28, 2), sd=0.7),
        "coatnet-5": _standard((192, 256, 512, 1280, 2048), (2, 2, 12, 28, 2), head_dim=64),
        "coatnet-6": _mixed_s3((192, 192, 384, 768, 1536, 2048),
                               s2_depth=4, s3_mb=8, s3_tfm=42, head_dim=128),
        "coatnet-7": _mixed_s3((192, 256, 512, 1024, 2048, 3072),
                               s2_depth=4, s3_mb=8, s3_tfm=42, head_dim=128),
        "tiny": _standard((16, 16, 32, 64, 128), (2, 2, 2, 3, 2),
                          head_dim=16, num_classes=10, resolution=32),
        # the five vertical-layout comparison variants, parameter-matched at
        # desk scale (see tests/test_audit.py for the 10% matching check)
        "layout:CCCC": _layout(("mbconv",) * 4, (2, 2, 3, 2), (32, 48, 96, 192), 24),
        "layout:CCCT": _layout(("mbconv", "mbconv", "mbconv", "tfm_rel"),
                               (2, 2, 3, 2), (32, 48, 96, 192), 24),
        "layout:CCTT": _layout(("mbconv", "mbconv", "tfm_rel", "tfm_rel"),
                               (2, 2, 3, 2), (32, 48, 96, 192), 24),
        "layout:CTTT": _layout(("mbconv", "tfm_rel", "tfm_rel", "tfm_rel"),
                               (2, 2, 3, 2), (32, 48, 96, 192), 24),
        "layout:ViT_rel": _vit_rel(width=144, depth=5),
    }


FAMILY_NAMES = tuple(_families().keys())


def family_config(name: str, num_classes: int | None = None,
                  resolution: int | None = None) -> ModelConfig:
    """A fresh ModelConfig for a registered family or layout variant."""
    fams = _families()
    if name not in fams:
        known = ", ".join(sorted(fams))
        raise ConfigError(f"unknown model {name!r}; known: {known}")
    cfg = fams[name]
    if num_classes is not None:
        cfg.num_classes = num_classes
    if resolution is not None:
        cfg.resolution = resolution
    validate_config(cfg)
    return cfg
