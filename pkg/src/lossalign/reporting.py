"""Run persistence and curve export.

A run directory holds report.csv (one row per child per step), phi.csv
(long-format parameter snapshots), and run.json (config, arm, events, final
metrics). Floats are written with repr so parsing a file reproduces the
in-memory values exactly. export_curves aggregates one or more saved runs
into per-step curve files with children averaged within a seed and
mean/std taken across seeds.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .config import TrainRunConfig
from .exceptions import InputError, UsageError
from .kernels import BACKEND
from .orchestrator import RunReport, StepRecord

REPORT_FILE = "report.csv"
PHI_FILE = "phi.csv"
META_FILE = "run.json"

_REPORT_COLUMNS = (
    "phase", "step", "child_id", "train_loss", "val_loss",
    "val_metric", "test_metric", "reward",
)

__all__ = ["save_report", "load_report", "export_curves"]


def _fmt(x) -> str:
    return repr(float(x))


def save_report(report: RunReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    rows = [("init", r) for r in report.initial_records]
    rows += [("train", r) for r in report.records]
    with open(os.path.join(out_dir, REPORT_FILE), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_REPORT_COLUMNS)
        for phase, r in rows:
            w.writerow(
                (phase, r.step, r.child_id, _fmt(r.train_loss), _fmt(r.val_loss),
                 _fmt(r.val_metric), _fmt(r.test_metric), r.reward)
            )
    with open(os.path.join(out_dir, PHI_FILE), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("phase", "step", "child_id", "parameter_id", "value"))
        for phase, r in rows:
            for pid, value in r.phi.items():
                w.writerow((phase, r.step, r.child_id, pid, _fmt(value)))
    meta = {
        "config": report.config.to_dict(),
        "arm": report.arm,
        "events": report.events,
        "final_test_metrics": report.final_test_metrics,
        "final_test_mean": report.final_test_mean,
        "final_test_std": report.final_test_std,
        "kernel_backend": BACKEND,
    }
    with open(os.path.join(out_dir, META_FILE), "w") as f:
        json.dump(meta, f, indent=2)


def load_report(out_dir: str) -> RunReport:
    """Rebuild a RunReport (sans policy) from a run directory."""
    meta_path = os.path.join(out_dir, META_FILE)
    if not os.path.exists(meta_path):
        raise InputError(f"{out_dir} does not contain {META_FILE}")
    with open(meta_path) as f:
        meta = json.load(f)
    phi: dict = {}
    with open(os.path.join(out_dir, PHI_FILE), newline="") as f:
        for row in csv.DictReader(f):
            key = (row["phase"], int(row["step"]), int(row["child_id"]))
            phi.setdefault(key, {})[row["parameter_id"]] = float(row["value"])
    initial, records = [], []
    with open(os.path.join(out_dir, REPORT_FILE), newline="") as f:
        for row in csv.DictReader(f):
            rec = StepRecord(
                step=int(row["step"]),
                child_id=int(row["child_id"]),
                train_loss=float(row["train_loss"]),
                val_loss=float(row["val_loss"]),
                val_metric=float(row["val_metric"]),
                test_metric=float(row["test_metric"]),
                reward=int(row["reward"]),
                phi=phi.get((row["phase"], int(row["step"]), int(row["child_id"])), {}),
            )
            (initial if row["phase"] == "init" else records).append(rec)
    return RunReport(
        config=TrainRunConfig.from_dict(meta["config"]),
        arm=meta["arm"],
        records=records,
        initial_records=initial,
        events=meta["events"],
        final_test_metrics=meta["final_test_metrics"],
        final_test_mean=meta["final_test_mean"],
        final_test_std=meta["final_test_std"],
    )


def _per_step_child_means(report: RunReport) -> dict:
    """step -> children-averaged (train_loss, val_loss, val_metric,
    test_metric, reward) for one run."""
    grouped: dict = {}
    for r in report.records:
        grouped.setdefault(r.step, []).append(r)
    out = {}
    for step, recs in sorted(grouped.items()):
        out[step] = tuple(
            float(np.mean([getattr(r, name) for r in recs]))
            for name in ("train_loss", "val_loss", "val_metric", "test_metric", "reward")
        )
    return out


def export_curves(reports: list[RunReport], out_dir: str) -> None:
    """Write curves_detail.csv, curves_summary.csv, and phi_curves.csv."""
    if not reports:
        raise UsageError("need at least one report to export")
    steps = sorted({r.step for r in reports[0].records})
    for rep in reports[1:]:
        if sorted({r.step for r in rep.records}) != steps:
            raise UsageError("reports cover different step ranges")
    os.makedirs(out_dir, exist_ok=True)

    per_seed = [(rep.config.master_seed, _per_step_child_means(rep)) for rep in reports]
    with open(os.path.join(out_dir, "curves_detail.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("step", "seed", "train_loss", "val_loss", "val_metric",
                    "test_metric", "reward"))
        for step in steps:
            for seed, table in per_seed:
                w.writerow((step, seed) + tuple(_fmt(v) for v in table[step]))

    names = ("train_loss", "val_loss", "val_metric", "test_metric", "reward")
    with open(os.path.join(out_dir, "curves_summary.csv"), "w", newline="") as f:
        w = csv.writer(f)
        header = ("step",) + tuple(
            f"{n}_{s}" for n in names for s in ("mean", "std")
        )
        w.writerow(header)
        for step in steps:
            stacked = np.asarray([table[step] for _, table in per_seed])
            cells = []
            for col in range(stacked.shape[1]):
                cells.append(_fmt(stacked[:, col].mean()))
                cells.append(_fmt(stacked[:, col].std()))
            w.writerow((step,) + tuple(cells))

    with open(os.path.join(out_dir, "phi_curves.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("step", "parameter_id", "value"))
        for step in steps:
            sums: dict = {}
            counts: dict = {}
            for rep in reports:
                for r in rep.records:
                    if r.step != step:
                        continue
                    for pid, value in r.phi.items():
                        sums[pid] = sums.get(pid, 0.0) + value
                        counts[pid] = counts.get(pid, 0) + 1
            for pid in sums:
                w.writerow((step, pid, _fmt(sums[pid] / counts[pid])))
