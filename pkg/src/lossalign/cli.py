"""Command-line harness around training, baselines, transfer, and analysis."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import TrainRunConfig, load_config
from .data import DatasetSpec, generate_dataset, save_splits
from .engine.network import MLP
from .exceptions import ConfigError, LossalignError, UsageError
from .kernels import BACKEND
from .losses import cross_entropy_loss, default_distance_loss
from .metrics import pairwise_distances
from .orchestrator import RunReport, run_baseline, run_training, run_transfer
from .reporting import export_curves, load_report, save_report
from .rng import stream
from .surface import loss_surface

REWARD_FLAGS = {
    "val-metric": "validation-metric",
    "val-loss": "validation-loss",
    "train-metric": "training-metric",
    "train-loss": "training-loss",
}
METRIC_FLAGS = {
    "error": "classification-error",
    "aucpr": "aucpr",
    "recall@k": "recall-at-k",
    "verification": "verification-accuracy",
}
BASELINE_FLAGS = {
    "fixed": "fixed-loss",
    "triplet": "fixed-triplet",
    "random-phi": "random-phi",
    "confusion-phi": "confusion-phi",
    "bandit": "contextual-bandit",
}

__all__ = ["main", "build_parser"]


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON run configuration")
    sub.add_argument("--seed", type=int, help="master seed override")
    sub.add_argument("--children", type=int, help="child model count override")
    sub.add_argument("--reward", choices=sorted(REWARD_FLAGS), help="reward source")
    sub.add_argument("--metric", choices=sorted(METRIC_FLAGS), help="evaluation metric")
    sub.add_argument("--episode-len", type=int, help="actions per episode")
    sub.add_argument("--history", type=int, help="observation window length")
    sub.add_argument("--controller-depth", type=int, choices=(1, 2, 3))
    sub.add_argument(
        "--ablate", action="append", choices=("history", "delta", "phi", "iter"),
        default=None, help="drop a state component (repeatable)",
    )
    sub.add_argument("--no-replay", action="store_true")
    sub.add_argument("--workers", type=int, default=1, help="child worker threads")
    sub.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lossalign",
        description="Adaptive loss alignment: train, compare, transfer, analyze.",
    )
    subs = p.add_subparsers(dest="command", required=True)

    train = subs.add_parser("train", help="adaptive-loss training run")
    _add_run_flags(train)

    base = subs.add_parser("baseline", help="non-adaptive comparison arm")
    base.add_argument("--mode", required=True, choices=sorted(BASELINE_FLAGS))
    _add_run_flags(base)

    transfer = subs.add_parser("transfer", help="reuse a trained policy")
    transfer.add_argument("--policy", required=True, help="policy checkpoint path")
    transfer.add_argument("--finetune", action="store_true")
    _add_run_flags(transfer)

    surf = subs.add_parser("analyze-surface", help="loss-surface curvature of a model")
    surf.add_argument("--checkpoint", required=True, help="model checkpoint path")
    surf.add_argument("--config", required=True, help="JSON run configuration (for data)")
    surf.add_argument("--seed", type=int, default=0, help="direction seed")
    surf.add_argument("--resolution", type=int, default=21)
    surf.add_argument("--span", type=float, default=1.0)
    surf.add_argument("--out", required=True)

    curves = subs.add_parser("export-curves", help="aggregate saved runs into curve CSVs")
    curves.add_argument("runs", nargs="+", help="run directories written by train/baseline")
    curves.add_argument("--out", required=True)

    gen = subs.add_parser("gen-data", help="write dataset splits to an .npz file")
    gen.add_argument("--config", required=True,
                     help="dataset spec JSON (or a run config holding one)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output .npz path")
    return p


def _resolve_config(args) -> TrainRunConfig:
    cfg = load_config(args.config) if args.config else TrainRunConfig()
    doc = cfg.to_dict()
    if args.seed is not None:
        doc["master_seed"] = args.seed
    if args.children is not None:
        doc["num_children"] = args.children
    if args.reward is not None:
        doc["reward_source"] = REWARD_FLAGS[args.reward]
    if args.metric is not None:
        doc["metric"] = METRIC_FLAGS[args.metric]
    if args.episode_len is not None:
        doc["episode_len"] = args.episode_len
    if args.history is not None:
        doc["history"] = args.history
    if args.controller_depth is not None:
        doc["controller_depth"] = args.controller_depth
    if args.ablate:
        doc["ablations"] = tuple(dict.fromkeys(args.ablate))
    if args.no_replay:
        doc["replay"] = False
    return TrainRunConfig.from_dict(doc)


def _finish_run(report: RunReport, out: str) -> None:
    save_report(report, out)
    if report.policy is not None:
        report.policy.save(os.path.join(out, "policy.json"))
    if report.final_models:
        # first child's final weights, for analyze-surface
        report.final_models[0].save(os.path.join(out, "model.json"))
    print(
        f"arm={report.arm} steps={report.config.total_steps} "
        f"children={report.config.num_children} backend={BACKEND} "
        f"final_test_metric={report.final_test_mean:.6f}"
        f"±{report.final_test_std:.6f} out={out}"
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LossalignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "train":
        cfg = _resolve_config(args)
        report = run_training(cfg, workers=args.workers)
        _finish_run(report, args.out)
        return 0
    if args.command == "baseline":
        cfg = _resolve_config(args)
        report = run_baseline(cfg, BASELINE_FLAGS[args.mode], workers=args.workers)
        _finish_run(report, args.out)
        return 0
    if args.command == "transfer":
        cfg = _resolve_config(args)
        report = run_transfer(cfg, args.policy, finetune=args.finetune, workers=args.workers)
        _finish_run(report, args.out)
        return 0
    if args.command == "analyze-surface":
        return _analyze_surface(args)
    if args.command == "export-curves":
        export_curves([load_report(d) for d in args.runs], args.out)
        print(f"curves written to {args.out}")
        return 0
    if args.command == "gen-data":
        with open(args.config) as f:
            doc = json.load(f)
        if "kind" not in doc and "dataset" in doc:
            doc = doc["dataset"]
        spec = DatasetSpec.from_dict(doc)
        splits = generate_dataset(spec, args.seed)
        save_splits(args.out, splits)
        print(f"dataset {spec.kind} (seed {args.seed}) written to {args.out}")
        return 0
    raise UsageError(f"unknown command {args.command!r}")


def _analyze_surface(args) -> int:
    cfg = load_config(args.config)
    net = MLP.load(args.checkpoint)
    splits = generate_dataset(cfg.dataset, cfg.master_seed)
    rng = stream(cfg.master_seed, "surface-batch")
    n = min(256, len(splits.y_train))
    picks = rng.choice(len(splits.y_train), size=n, replace=False)
    batch = (splits.x_train[picks], splits.y_train[picks])

    if net.head == "softmax":
        loss_fn = lambda m, b: cross_entropy_loss(m.forward(b[0]), b[1])
    else:
        def loss_fn(m, b):
            emb = m.forward(b[0])
            d = pairwise_distances(emb)
            iu = np.triu_indices(len(b[1]), 1)
            same = b[1][iu[0]] == b[1][iu[1]]
            return default_distance_loss(d[iu][same], d[iu][~same])

    grid = loss_surface(
        net, loss_fn, batch, resolution=args.resolution, span=args.span, seed=args.seed
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "surface.csv")
    with open(path, "w") as f:
        f.write("x,y,loss\n")
        for i, x in enumerate(grid.xs):
            for j, y in enumerate(grid.ys):
                f.write(f"{x!r},{y!r},{grid.values[i, j]!r}\n")
    summary = {
        "mean_curvature": grid.mean_curvature,
        "center_loss": grid.center_loss,
        "resolution": grid.resolution,
        "span": args.span,
        "checkpoint": args.checkpoint,
    }
    with open(os.path.join(args.out, "surface.json"), "w") as f:
        json.dump(summary, f, indent=2)
    print(f"mean_curvature={grid.mean_curvature!r} out={args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
