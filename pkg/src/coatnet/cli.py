"""Command-line front end.

Subcommands: summarize, train, gradcheck, compare-layouts, adapt.
Exit codes: 0 success, 2 usage/config error, 3 numerical divergence.
Every run echoes its fully resolved configuration (defaults merged with
overrides) so results are reproducible from the output alone.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import gradcheck
from .audit import summarize
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (FAMILY_NAMES, config_from_json, config_to_dict, family_config)
from .data import load_cifar10, synthetic_dataset
from .errors import (CheckpointError, ConfigError, DivergedError, LabelError,
                     ResolutionError, ShapeError)
from .train import (TrainConfig, TrainResult, evaluate, train,
                    train_config_from_dict, train_config_to_dict)

RUN_SCHEMA = "coatnet-run/1"
LAYOUT_VARIANTS = ("layout:ViT_rel", "layout:CCCC", "layout:CCCT",
                   "layout:CCTT", "layout:CTTT")


def _model_config(args):
    if getattr(args, "config", None):
        with open(args.config) as f:
            return config_from_json(f.read())
    if getattr(args, "model", None):
        return family_config(args.model)
    raise ConfigError("pass --model NAME or --config PATH")


def _load_run_config(path: str):
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    model_part = doc.get("model")
    if isinstance(model_part, str):
        model_cfg = family_config(model_part)
    elif isinstance(model_part, dict):
        from .config import config_from_dict
        model_cfg = config_from_dict(model_part)
    else:
        raise ConfigError('run config needs a "model" entry (family name or config object)')
    train_cfg = train_config_from_dict(doc.get("train", {}))
    return model_cfg, train_cfg


def _resolved_run_echo(command: str, model_cfg, train_cfg, extra: dict) -> dict:
    return {
        "schema": RUN_SCHEMA,
        "command": command,
        "model_config": config_to_dict(model_cfg),
        "train_config": train_config_to_dict(train_cfg),
        **extra,
    }


def _dataset(spec: str, resolution: int, samples: int | None, seed: int, split: str):
    if spec == "synthetic":
        return synthetic_dataset(samples or 1024, num_classes=10,
                                 resolution=resolution, seed=seed, split=split)
    return load_cifar10(spec, limit=samples, split=split)


def _write_result(out_dir: str, result: TrainResult, echo: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
        json.dump(echo, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "metrics.jsonl"), "w") as f:
        f.write(result.metrics_jsonl())
    save_checkpoint(result.model, os.path.join(out_dir, "checkpoint.ckpt"))
    if result.ema:
        save_checkpoint(result.model, os.path.join(out_dir, "ema.ckpt"),
                        override=result.ema)


# -- subcommands ---------------------------------------------------------------

def cmd_summarize(args) -> int:
    cfg = _model_config(args)
    if args.resolution:
        cfg.resolution = args.resolution
    name = args.model or os.path.basename(args.config)
    report = summarize(cfg, model_name=name)
    if args.format == "json":
        doc = report.to_dict()
        doc["config"] = config_to_dict(cfg)
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(f"# config: {json.dumps(config_to_dict(cfg), sort_keys=True)}")
        print(report.to_text())
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = _load_run_config(args.config)
    data = _dataset(args.data, model_cfg.resolution,
                    args.samples, train_cfg.seed, "train")
    result = train(model_cfg, train_cfg, data)
    echo = _resolved_run_echo("train", model_cfg, train_cfg,
                              {"data": args.data, "out": args.out})
    _write_result(args.out, result, echo)
    final = result.metrics[-1] if result.metrics else {}
    print(f"trained {train_cfg.epochs} epochs; final train loss "
          f"{final.get('train_loss', float('nan')):.4f}, "
          f"eval accuracy {final.get('eval_acc', float('nan')):.4f}")
    print(f"wrote {args.out}/checkpoint.ckpt, ema.ckpt, metrics.jsonl")
    return 0


def cmd_gradcheck(args) -> int:
    failed = 0
    for scope in (("op", "block", "model") if args.scope == "all" else (args.scope,)):
        for name, err in gradcheck.run_scope(scope, seed=args.seed):
            ok = err < gradcheck.TOLERANCE
            failed += 0 if ok else 1
            print(f"{scope:6s} {name:34s} max_rel_err {err:.3e}  "
                  f"{'PASS' if ok else 'FAIL'}")
    print(f"gradcheck: {'all passed' if not failed else f'{failed} unit(s) failed'} "
          f"(tolerance {gradcheck.TOLERANCE:g})")
    return 0 if not failed else 1


def cmd_compare_layouts(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    train_cfg = TrainConfig(epochs=args.budget, seed=args.seed,
                            batch_size=args.batch_size, peak_lr=args.peak_lr,
                            mixup_alpha=0.0, label_smoothing=0.1,
                            warmup_steps=args.warmup, ema_decay=0.0)
    train_data = _dataset(args.data, 32, args.samples, args.seed, "train")
    eval_seed = args.seed + 1 if args.data == "synthetic" else args.seed
    eval_data = (synthetic_dataset(args.eval_samples, 10, 32, eval_seed, split="eval")
                 if args.data == "synthetic"
                 else load_cifar10(args.data, limit=args.samples + args.eval_samples,
                                   split="eval").subset(args.samples,
                                                        args.samples + args.eval_samples))
    rows = []
    for variant in LAYOUT_VARIANTS:
        model_cfg = family_config(variant)
        result = train(model_cfg, train_cfg, train_data, eval_data=eval_data)
        params = summarize(model_cfg).total_params
        with open(os.path.join(args.out, _slug(variant) + ".metrics.jsonl"), "w") as f:
            f.write(result.metrics_jsonl())
        train_acc, _ = evaluate(result.model, train_data)
        last = result.metrics[-1]
        rows.append({
            "variant": variant, "params": params,
            "final_train_loss": last["train_loss"],
            "final_train_acc": train_acc,
            "final_eval_acc": last["eval_acc"],
            "generalization_gap": train_acc - last["eval_acc"],
            "curve": [{"epoch": m["epoch"], "train_loss": m["train_loss"],
                       "eval_acc": m["eval_acc"]} for m in result.metrics],
        })
        print(f"{variant:18s} params {params:9,}  train_acc {train_acc:.3f}  "
              f"eval_acc {last['eval_acc']:.3f}")
    report = {
        "schema": "coatnet-layout-comparison/1",
        "budget_epochs": args.budget, "samples": args.samples,
        "eval_samples": args.eval_samples, "seed": args.seed,
        "train_config": train_config_to_dict(train_cfg),
        "data": args.data,
        "variants": rows,
    }
    with open(os.path.join(args.out, "report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    if args.plot:
        _plot_curves(rows, os.path.join(args.out, "curves.png"))
    print(f"wrote {args.out}/report.json")
    return 0


def _slug(name: str) -> str:
    return name.replace(":", "_").replace("/", "_")


def _plot_curves(rows, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for row in rows:
        epochs = [c["epoch"] for c in row["curve"]]
        ax1.plot(epochs, [c["train_loss"] for c in row["curve"]], label=row["variant"])
        ax2.plot(epochs, [c["eval_acc"] for c in row["curve"]], label=row["variant"])
    ax1.set_xlabel("epoch"); ax1.set_ylabel("train loss")
    ax2.set_xlabel("epoch"); ax2.set_ylabel("eval accuracy")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def cmd_adapt(args) -> int:
    model = load_checkpoint(args.checkpoint)
    old_res = model.cfg.resolution
    old = model.bias_table_extents()
    if args.resolution < old_res:
        raise ConfigError(
            f"cannot adapt down: checkpoint is {old_res}px, asked for {args.resolution}px")
    model.adapt_resolution(args.resolution)
    new = model.bias_table_extents()
    for stage in sorted(set(old) | set(new)):
        oh, ow = old.get(stage, ("-", "-"))
        nh, nw = new.get(stage, ("-", "-"))
        print(f"{stage}: bias table {oh}x{ow} -> {nh}x{nw}")
    save_checkpoint(model, args.out)
    print(f"adapted {old_res} -> {args.resolution}; wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="coatnet",
        description="hybrid conv-attention models: audit, train, verify, adapt")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("summarize", help="symbolic parameter/MAC audit")
    s.add_argument("--model", choices=sorted(FAMILY_NAMES), help="family name")
    s.add_argument("--config", help="model config JSON path")
    s.add_argument("--resolution", type=int, default=None)
    s.add_argument("--format", choices=("text", "json"), default="text")
    s.set_defaults(fn=cmd_summarize)

    t = sub.add_parser("train", help="train from a run-config JSON")
    t.add_argument("--config", required=True,
                   help='JSON {"model": name-or-object, "train": {...}}')
    t.add_argument("--data", required=True, help="CIFAR-10 bin path or 'synthetic'")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--samples", type=int, default=None,
                   help="cap on training samples (synthetic default 1024)")
    t.set_defaults(fn=cmd_train)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--scope", choices=("op", "block", "model", "all"), default="all")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)

    c = sub.add_parser("compare-layouts",
                       help="train the five stage-layout variants under one budget")
    c.add_argument("--budget", type=int, default=6, help="epochs per variant")
    c.add_argument("--data", required=True, help="CIFAR-10 bin path or 'synthetic'")
    c.add_argument("--out", required=True)
    c.add_argument("--samples", type=int, default=4096)
    c.add_argument("--eval-samples", type=int, default=1024)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--batch-size", type=int, default=128)
    c.add_argument("--peak-lr", type=float, default=1e-3)
    c.add_argument("--warmup", type=int, default=50)
    c.add_argument("--plot", action="store_true", help="also write curves.png")
    c.set_defaults(fn=cmd_compare_layouts)

    a = sub.add_parser("adapt", help="grow a checkpoint to a larger resolution")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--resolution", type=int, required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(fn=cmd_adapt)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, ShapeError, LabelError, ResolutionError,
            CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
