"""Symbolic parameter and multiply-accumulate auditing.

Counts are derived from the configuration alone (nothing is allocated) and
use the convention 1 MAC = 1 reported FLOP, calibrated against the published
sizes of this model family. Counted: convolutions (plus their biases),
linear projections, attention logits and aggregation. Excluded:
normalization, activations, pooling and the bias-table gather, which are
index/elementwise work, not multiply-accumulates.

This module intentionally re-derives every block's tensor inventory from
first principles instead of calling the builder; tests cross-check the two
paths against each other tensor-for-tensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .config import ModelConfig, validate_config

AUDIT_SCHEMA = "coatnet-audit/1"


@dataclass
class AuditRow:
    name: str
    params: int
    macs: int


@dataclass
class AuditReport:
    model: str
    resolution: int
    rows: list[AuditRow]

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "schema": AUDIT_SCHEMA,
            "model": self.model,
            "resolution": self.resolution,
            "convention": "1 MAC = 1 FLOP; norm/activation/pooling/gather excluded",
            "stages": [{"name": r.name, "params": r.params, "macs": r.macs}
                       for r in self.rows],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"model: {self.model}   resolution: {self.resolution}",
                 "convention: 1 MAC = 1 FLOP (norm/activation/pooling/gather excluded)",
                 f"{'stage':<8} {'params':>14} {'MACs':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<8} {r.params:>14,} {r.macs:>16,}")
        lines.append(f"{'total':<8} {self.total_params:>14,} {self.total_macs:>16,}")
        return "\n".join(lines)


def conv_cost(kh: int, kw: int, cin: int, cout: int, out_h: int, out_w: int,
              groups: int = 1, bias: bool = True) -> tuple[int, int]:
    """(params, MACs) of one convolution at the given output grid."""
    params = kh * kw * (cin // groups) * cout + (cout if bias else 0)
    macs = out_h * out_w * cout * kh * kw * (cin // groups)
    return params, macs


def _norm_cost(c: int) -> tuple[int, int]:
    return 2 * c, 0


def _conv_block_cost(d_in, d_out, stride, out_g) -> tuple[int, int]:
    p, m = _norm_cost(d_in)
    cp, cm = conv_cost(3, 3, d_in, d_out, out_g, out_g)
    p, m = p + cp, m + cm
    if stride == 2 or d_in != d_out:
        ip, im = conv_cost(1, 1, d_in, d_out, out_g, out_g)
        p, m = p + ip, m + im
    return p, m


def _mbconv_cost(d_in, d_out, stride, out_g, variant) -> tuple[int, int]:
    e = 4 * d_in
    in_g = out_g * stride
    p, m = _norm_cost(d_in)
    # expansion 1x1: runs at full resolution when the depthwise conv strides
    expand_g = in_g if (stride == 2 and variant == "strided_dwconv") else out_g
    cp, cm = conv_cost(1, 1, d_in, e, expand_g, expand_g)
    p, m = p + cp, m + cm
    cp, cm = conv_cost(3, 3, e, e, out_g, out_g, groups=e)
    p, m = p + cp, m + cm
    se_mid = e // 4
    p += e * se_mid + se_mid * e
    m += e * se_mid + se_mid * e          # two gates at one pooled position
    cp, cm = conv_cost(1, 1, e, d_out, out_g, out_g)
    p, m = p + cp, m + cm
    if stride == 2 or d_in != d_out:
        ip, im = conv_cost(1, 1, d_in, d_out, out_g, out_g)
        p, m = p + ip, m + im
    return p, m


def _tfm_cost(d_in, d_out, stride, out_g, head_dim, attn_mode) -> tuple[int, int]:
    t = out_g * out_g
    width = d_out                          # heads * head_dim
    heads = d_out // head_dim
    p, m = _norm_cost(d_in)
    p += 3 * d_in * width                  # q, k, v projections
    m += 3 * t * d_in * width
    m += 2 * t * t * width                 # logits + weighted aggregation
    if attn_mode != "none":
        p += heads * (2 * out_g - 1) * (2 * out_g - 1)
    p += width * d_out                     # output projection
    m += t * width * d_out
    if stride == 2 or d_in != d_out:
        ip, im = conv_cost(1, 1, d_in, d_out, out_g, out_g)
        p, m = p + ip, m + im
    np_, nm = _norm_cost(d_out)
    p, m = p + np_, m + nm
    f = 4 * d_out
    p += d_out * f + f * d_out             # FFN
    m += 2 * t * d_out * f
    return p, m


def summarize(cfg: ModelConfig, resolution: int | None = None,
              model_name: str = "custom") -> AuditReport:
    """Per-stage and total parameter/MAC counts at a given input resolution."""
    validate_config(cfg)
    r = cfg.resolution if resolution is None else resolution
    if r % cfg.total_stride:
        raise ValueError(f"resolution {r} not divisible by stride {cfg.total_stride}")

    rows = []
    if cfg.stem.kind == "patchify":
        g = r // 4
        p, m = conv_cost(4, 4, 3, cfg.stem.width, g, g)
        rows.append(AuditRow("S0", p, m))
    else:
        g = r // 2
        p, m = conv_cost(3, 3, 3, cfg.stem.width, g, g)
        for _ in range(cfg.stem.depth - 1):
            bp, bm = _conv_block_cost(cfg.stem.width, cfg.stem.width, 1, g)
            p, m = p + bp, m + bm
        rows.append(AuditRow("S0", p, m))

    width = cfg.stem.width
    for slot_idx, slot in enumerate(cfg.stages):
        if cfg.stem.kind == "patchify":
            g = r // 4
        else:
            g = r // (2 ** (slot_idx + 2))
        p = m = 0
        first = cfg.stem.kind != "patchify"
        for seg in slot:
            for _ in range(seg.depth):
                stride = 2 if first else 1
                first = False
                if seg.kind == "mbconv":
                    bp, bm = _mbconv_cost(width, seg.width, stride, g,
                                          cfg.downsample_variant)
                elif seg.kind == "tfm_rel":
                    bp, bm = _tfm_cost(width, seg.width, stride, g,
                                       cfg.head_dim, cfg.attn_mode)
                else:
                    bp, bm = _conv_block_cost(width, seg.width, stride, g)
                width = seg.width
                p, m = p + bp, m + bm
        rows.append(AuditRow(f"S{slot_idx + 1}", p, m))

    hp, hm = _norm_cost(width)
    hp += width * cfg.num_classes + cfg.num_classes
    hm += width * cfg.num_classes
    rows.append(AuditRow("head", hp, hm))
    return AuditReport(model_name, r, rows)
