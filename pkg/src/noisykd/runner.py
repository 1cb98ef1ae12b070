"""Experiment orchestration: config parsing, single cells, method x rate x seed grids, reports."""

import configparser
import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import SYNTHETIC_KINDS, TASK_METRICS, generate_synthetic, inject_noise, load_dataset, split_three_way
from .errors import InvalidConfigError, NoisyKDError, StageError
from .metrics import task_score
from .model import predict
from .seeding import derive_seed
from .trainers import Method, Oracle, TrainConfig, train

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
ALPHA_METHODS = (Method.VANILLA, Method.CD, Method.CD_LR)
CURVE_COLUMNS = ("epoch", "train_loss", "val_loss", "val_metric", "clean_val_metric")
TABLE_COLUMNS = ("method", "rate", "n_seeds", "student_mean", "student_std", "teacher_mean",
                 "chosen_alphas", "agreement_before", "agreement_after")


@dataclass(frozen=True)
class ExperimentGrid:
    # dataset: synthetic generator unless data_path is set
    kind: str = "blobs"
    n: int = 2000
    d: int = 2
    num_classes: int = 2
    class_separation: float = 3.0
    data_path: str = ""
    task_metric: str = "accuracy"
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    # sweep
    noise_rates: tuple = (0.0, 0.25, 0.5)
    methods: tuple = ("NO_KD", "VANILLA", "SELF_DSTL", "CD", "CD_LR")
    alphas: tuple = (0.25, 0.5, 0.75)
    seeds: tuple = (0, 1, 2)
    base_alpha: float = 0.5
    # shared training settings
    epochs: int = 30
    refine_epoch: int = 2
    learning_rate: float = 0.1
    batch_size: int = 32
    early_stopping_patience: int = 5
    hidden: int = 64
    activation: str = "tanh"
    temperature: float = 1.0
    n_trees: int = 100
    max_depth: int = 8
    flag_threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "noise_rates", tuple(float(r) for r in self.noise_rates))
        try:
            object.__setattr__(self, "methods", tuple(Method(m).value for m in self.methods))
        except ValueError as exc:
            raise InvalidConfigError(str(exc)) from None
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for name in ("noise_rates", "methods", "alphas", "seeds"):
            if not getattr(self, name):
                raise InvalidConfigError(f"{name} must be non-empty")
        for r in self.noise_rates:
            if not 0.0 <= r <= 0.5:
                raise InvalidConfigError(f"noise rate {r} outside [0, 0.5]")
        for a in self.alphas + (self.base_alpha,):
            if not 0.0 <= a <= 1.0:
                raise InvalidConfigError(f"alpha {a} outside [0, 1]")
        if not self.data_path and self.kind not in SYNTHETIC_KINDS:
            raise InvalidConfigError(f"kind must be one of {SYNTHETIC_KINDS}")
        if self.task_metric not in TASK_METRICS:
            raise InvalidConfigError(f"task_metric must be one of {TASK_METRICS}")
        if not (0 < self.val_fraction < 1 and 0 < self.test_fraction < 1
                and self.val_fraction + self.test_fraction < 1):
            raise InvalidConfigError("val_fraction and test_fraction must be in (0,1) and sum below 1")
        self.train_config(Method.CD, self.base_alpha, 0)  # validates shared fields

    def train_config(self, method, alpha, seed):
        return TrainConfig(
            method=method, alpha=alpha, epochs=self.epochs, refine_epoch=self.refine_epoch,
            learning_rate=self.learning_rate, batch_size=self.batch_size, seed=seed,
            early_stopping_patience=self.early_stopping_patience, hidden=self.hidden,
            activation=self.activation, temperature=self.temperature, n_trees=self.n_trees,
            max_depth=self.max_depth, flag_threshold=self.flag_threshold,
        )

    def cells(self):
        out = []
        for method in self.methods:
            alphas = self.alphas if Method(method) in ALPHA_METHODS else (self.base_alpha,)
            for rate in self.noise_rates:
                for alpha in alphas:
                    for seed in self.seeds:
                        out.append(Cell(method, rate, alpha, seed))
        return out

    def to_dict(self):
        d = asdict(self)
        for k in ("noise_rates", "methods", "alphas", "seeds"):
            d[k] = list(d[k])
        return d


GRID_KEYS = {f.name: f for f in fields(ExperimentGrid)}
LIST_KEYS = ("noise_rates", "methods", "alphas", "seeds")
KEY_HELP = {
    "kind": "synthetic generator: blobs | two-moons-like | bag-of-words-topic",
    "n": "number of synthetic samples",
    "d": "feature dimension (vocabulary size for bag-of-words-topic)",
    "num_classes": "number of classes",
    "class_separation": "distance scale between class distributions (0 = indistinguishable)",
    "data_path": "CSV/JSONL file to load instead of generating data",
    "task_metric": "accuracy | mcc",
    "val_fraction": "fraction held out as the noisy validation set",
    "test_fraction": "fraction held out as the clean test slice",
    "noise_rates": "comma-separated label-noise rates in [0, 0.5]",
    "methods": "comma-separated subset of NO_KD,VANILLA,SELF_DSTL,CD,CD_LR",
    "alphas": "comma-separated alpha grid for VANILLA, CD and CD_LR",
    "seeds": "comma-separated master seeds",
    "base_alpha": "alpha used by SELF_DSTL (NO_KD ignores alpha)",
    "epochs": "maximum training epochs",
    "refine_epoch": "epochs of warm-up before label refinement / self-distillation",
    "learning_rate": "SGD learning rate",
    "batch_size": "mini-batch size",
    "early_stopping_patience": "epochs without noisy-validation improvement before stopping",
    "hidden": "teacher hidden width (student uses half, one layer)",
    "activation": "tanh | relu",
    "temperature": "softmax temperature of the distillation term",
    "n_trees": "trees in the refinement discriminator",
    "max_depth": "maximum discriminator tree depth",
    "flag_threshold": "discriminator score at or above which a sample is flagged",
}


def _coerce(name, raw):
    f = GRID_KEYS[name]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if name in LIST_KEYS:
            items = raw if isinstance(raw, (list, tuple)) else [s for s in raw.replace(" ", "").split(",") if s]
            conv = {"noise_rates": float, "alphas": float, "seeds": int, "methods": str}[name]
            return tuple(conv(v) for v in items)
        if f.type in (int, "int"):
            return int(raw)
        if f.type in (float, "float"):
            return float(raw)
        return str(raw)
    except ValueError:
        raise InvalidConfigError(f"bad value for {name}: {raw!r}") from None


def load_grid(path=None, overrides=None):
    """Read a ``[grid]`` key/value config file; ``overrides`` win over file values."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise InvalidConfigError(f"cannot read config {path}: {exc}") from None
        if not parser.has_section("grid"):
            raise InvalidConfigError(f"{path}: missing [grid] section")
        for key, raw in parser.items("grid"):
            if key not in GRID_KEYS:
                raise InvalidConfigError(f"{path}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in GRID_KEYS:
            raise InvalidConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, raw)
    try:
        return ExperimentGrid(**values)
    except (ValueError, TypeError) as exc:
        raise InvalidConfigError(str(exc)) from None


# -- single cell ---------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    method: str
    rate: float
    alpha: float
    seed: int

    @property
    def cell_id(self):
        alpha = f"a{self.alpha:.2f}" if Method(self.method) in ALPHA_METHODS else "a-"
        return f"{self.method}_r{self.rate:.2f}_{alpha}_s{self.seed}"


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is tagged with its stage
        raise StageError(name, exc) from exc


def build_splits(grid, seed, rate):
    """Dataset -> train/val/test split -> independent noise on train and val at the same rate."""
    if grid.data_path:
        ds = _stage("data", load_dataset, grid.data_path, task_metric=grid.task_metric)
    else:
        ds = _stage("data", generate_synthetic, grid.kind, grid.n, grid.d, grid.num_classes,
                    grid.class_separation, derive_seed(seed, "data-gen"), grid.task_metric)
    train_set, val_set, test_set = _stage(
        "split", split_three_way, ds, grid.val_fraction, grid.test_fraction, derive_seed(seed, "split"))
    train_set = _stage("noise", inject_noise, train_set, rate, derive_seed(seed, "train-noise"))
    val_set = _stage("noise", inject_noise, val_set, rate, derive_seed(seed, "val-noise"))
    return train_set, val_set, test_set


def run_experiment(cell, grid):
    """Run one (method, rate, alpha, seed) cell and score it on the clean test slice."""
    if not 0.0 <= cell.rate <= 0.5:
        raise InvalidConfigError(f"noise rate {cell.rate} outside [0, 0.5]")
    cfg = _stage("config", grid.train_config, cell.method, cell.alpha, cell.seed)
    train_set, val_set, test_set = build_splits(grid, cell.seed, cell.rate)
    result = _stage(
        "train", train, train_set, val_set, cfg,
        val_noise_flags=val_set.noise_flags if cfg.method is Method.CD_LR else None,
        oracle=Oracle.from_datasets(train_set, val_set),
    )

    def evaluate():
        metrics = {"student": task_score(grid.task_metric, predict(result.student, test_set.features),
                                         test_set.true_labels)}
        if result.teacher is not None:
            metrics["teacher"] = task_score(grid.task_metric, predict(result.teacher, test_set.features),
                                            test_set.true_labels)
        return metrics

    result.test_metrics = _stage("evaluate", evaluate)
    return result


def _run_cell(args):
    cell, grid = args
    try:
        return cell, run_experiment(cell, grid).to_dict(), None
    except NoisyKDError as exc:
        return cell, None, str(exc)


# -- grid ------------------------------------------------------------------------

def _select_alpha(entries):
    """Pick the entry with the best noisy-validation metric; ties go to the earlier alpha."""
    best = None
    for alpha, res in sorted(entries, key=lambda e: e[0]):
        if best is None or res["best_val_metric"] > best[1]["best_val_metric"]:
            best = (alpha, res)
    return best


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def aggregate(grid, cell_records):
    by_key = {}
    for rec in cell_records:
        if rec["status"] != "ok":
            continue
        key = (rec["method"], rec["rate"], rec["seed"])
        by_key.setdefault(key, []).append((rec["alpha"], rec["result"]))
    rows = []
    for method in grid.methods:
        for rate in grid.noise_rates:
            per_seed = []
            for seed in grid.seeds:
                entries = by_key.get((method, rate, seed))
                if not entries:
                    continue
                alpha, res = _select_alpha(entries)
                relabel = res.get("relabel_stats") or {}
                per_seed.append({
                    "seed": seed,
                    "alpha": alpha,
                    "cell_id": Cell(method, rate, alpha, seed).cell_id,
                    "student": res["test_metrics"]["student"],
                    "teacher": res["test_metrics"].get("teacher"),
                    "best_val_metric": res["best_val_metric"],
                    "agreement_before": relabel.get("agreement_before"),
                    "agreement_after": relabel.get("agreement_after"),
                })
            students = [p["student"] for p in per_seed]
            rows.append({
                "method": method,
                "rate": rate,
                "n_seeds": len(per_seed),
                "student_mean": _mean(students),
                "student_std": float(np.std(students)) if students else None,
                "teacher_mean": _mean([p["teacher"] for p in per_seed]),
                "agreement_before": _mean([p["agreement_before"] for p in per_seed]),
                "agreement_after": _mean([p["agreement_after"] for p in per_seed]),
                "per_seed": per_seed,
            })
    return rows


def run_grid(grid, jobs=1):
    """Execute every cell, select alpha per (method, rate, seed) on noisy validation, aggregate."""
    cells = grid.cells()
    work = [(c, grid) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, work))
    else:
        outcomes = [_run_cell(w) for w in work]
    records = []
    for cell, result, error in outcomes:
        rec = {"cell_id": cell.cell_id, "method": cell.method, "rate": cell.rate,
               "alpha": cell.alpha, "seed": cell.seed}
        if error is None:
            rec.update(status="ok", result=result)
        else:
            log.error("cell %s failed: %s", cell.cell_id, error)
            rec.update(status="failed", error=error)
        records.append(rec)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "grid": grid.to_dict(),
        "cells": records,
        "table": aggregate(grid, records),
    }


def failed_cells(report):
    return [c for c in report["cells"] if c["status"] != "ok"]


# -- output ----------------------------------------------------------------------

def dumps_report(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def emit_report(report, out_dir, figures=True):
    """Write report.json, table.csv, curves/<cell>.csv and (optionally) figures/*.png."""
    if not report.get("cells"):
        raise InvalidConfigError("report has no cells; nothing to write")
    out_dir = str(out_dir)
    curves_dir = os.path.join(out_dir, "curves")
    try:
        os.makedirs(curves_dir, exist_ok=True)
        paths = []
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            fh.write(dumps_report(report))
        paths.append(path)

        path = os.path.join(out_dir, "table.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_COLUMNS)
            for row in report["table"]:
                alphas = ";".join(_fmt(p["alpha"]) for p in row["per_seed"])
                w.writerow([row["method"], _fmt(row["rate"]), row["n_seeds"], _fmt(row["student_mean"]),
                            _fmt(row["student_std"]), _fmt(row["teacher_mean"]), alphas,
                            _fmt(row["agreement_before"]), _fmt(row["agreement_after"])])
        paths.append(path)

        for cell in report["cells"]:
            if cell["status"] != "ok":
                continue
            path = os.path.join(curves_dir, f"{cell['cell_id']}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CURVE_COLUMNS)
                for r in cell["result"]["records"]:
                    w.writerow([_fmt(r[c]) for c in CURVE_COLUMNS])
            paths.append(path)
    except OSError as exc:
        raise OSError(f"cannot write report to {exc.filename or out_dir}: {exc.strerror}") from exc

    if figures:
        from .plotting import render_figures

        paths.extend(render_figures(report, os.path.join(out_dir, "figures")))
    return paths


def load_report(path):
    with open(path) as fh:
        report = json.load(fh)
    if report.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise InvalidConfigError(f"unsupported report schema_version {report.get('schema_version')}")
    return report


def format_table(report):
    """Plain-text method x noise-rate summary (metrics scaled x100)."""
    rates = sorted({row["rate"] for row in report["table"]})
    lines = ["method      " + "".join(f"{f'{r:.0%} noise':>24}" for r in rates)]
    for method in dict.fromkeys(row["method"] for row in report["table"]):
        cells = []
        for r in rates:
            row = next((x for x in report["table"] if x["method"] == method and x["rate"] == r), None)
            if row is None or row["student_mean"] is None:
                cells.append(f"{'-':>24}")
                continue
            s = f"S {100 * row['student_mean']:.1f}"
            if row["teacher_mean"] is not None:
                s += f" / T {100 * row['teacher_mean']:.1f}"
            cells.append(f"{s:>24}")
        lines.append(f"{method:<12}" + "".join(cells))
    return "\n".join(lines)
