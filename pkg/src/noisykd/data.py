"""Datasets, synthetic generators, file ingestion, splitting and label corruption."""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, ParseError, SchemaError

TASK_METRICS = ("accuracy", "mcc")
SYNTHETIC_KINDS = ("blobs", "two-moons-like", "bag-of-words-topic")
DUMP_SCHEMA_VERSION = 1


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrainView:
    """What a trainer is allowed to see: features and observed labels only."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    task_metric: str = "accuracy"

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Features with observed labels plus oracle-only ``true_labels``/``noise_flags``."""

    features: np.ndarray
    observed_labels: np.ndarray
    true_labels: np.ndarray
    noise_flags: np.ndarray
    num_classes: int
    task_metric: str = "accuracy"

    def __post_init__(self):
        feats = _frozen(self.features, np.float64)
        obs = _frozen(self.observed_labels, np.int64)
        true = _frozen(self.true_labels, np.int64)
        flags = _frozen(self.noise_flags, bool)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "observed_labels", obs)
        object.__setattr__(self, "true_labels", true)
        object.__setattr__(self, "noise_flags", flags)
        n = len(obs)
        if n == 0:
            raise InvalidInputError("dataset is empty")
        if feats.ndim != 2 or feats.shape[0] != n or true.shape != (n,) or flags.shape != (n,):
            raise SchemaError("features/labels/flags have inconsistent shapes")
        if self.num_classes < 2:
            raise InvalidInputError("need at least 2 classes")
        for arr in (obs, true):
            if arr.min() < 0 or arr.max() >= self.num_classes:
                raise InvalidInputError(f"label out of range [0, {self.num_classes})")
        if not np.array_equal(flags, obs != true):
            raise InvalidInputError("noise_flags must equal observed_labels != true_labels")
        if self.task_metric not in TASK_METRICS:
            raise InvalidConfigError(f"task_metric must be one of {TASK_METRICS}")

    def __len__(self):
        return len(self.observed_labels)

    @property
    def dim(self):
        return self.features.shape[1]

    def view(self):
        return TrainView(self.features, self.observed_labels, self.num_classes, self.task_metric)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.features[idx],
            self.observed_labels[idx],
            self.true_labels[idx],
            self.noise_flags[idx],
            self.num_classes,
            self.task_metric,
        )

    def with_observed(self, labels):
        labels = np.asarray(labels, dtype=np.int64)
        return LabeledDataset(
            self.features,
            labels,
            self.true_labels,
            labels != self.true_labels,
            self.num_classes,
            self.task_metric,
        )

    @classmethod
    def clean(cls, features, labels, num_classes=None, task_metric="accuracy"):
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = max(int(labels.max()) + 1, 2) if labels.size else 2
        return cls(features, labels, labels, np.zeros(len(labels), bool), num_classes, task_metric)


@dataclass(frozen=True)
class SplitSpec:
    val_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.val_fraction < 1.0):
            raise InvalidConfigError("val_fraction must lie in (0, 1)")


# -- synthetic generators -----------------------------------------------------

def _balanced_labels(n, num_classes, rng):
    return rng.permutation(np.arange(n) % num_classes)


def generate_synthetic(kind, n, d, num_classes, class_separation, seed, task_metric="accuracy"):
    """Build a clean synthetic classification set.

    * ``blobs``: unit-variance Gaussians whose centres sit on a circle of
      radius ``class_separation`` in the first two coordinates.
    * ``two-moons-like``: interleaved half-circles (scaled by the separation)
      plus Gaussian jitter, remaining coordinates pure noise.
    * ``bag-of-words-topic``: term frequencies of 50-token documents drawn
      from a background distribution mixed with a class topic; ``d`` is the
      vocabulary size.

    With ``class_separation == 0`` all classes share one distribution.
    """
    if kind not in SYNTHETIC_KINDS:
        raise InvalidConfigError(f"unknown synthetic kind {kind!r}")
    if num_classes < 2 or d < 2 or n < 10 * num_classes:
        raise InvalidConfigError("need num_classes >= 2, d >= 2 and n >= 10 * num_classes")
    if class_separation < 0:
        raise InvalidConfigError("class_separation must be >= 0")
    rng = np.random.default_rng(seed)
    y = _balanced_labels(n, num_classes, rng)

    if kind == "blobs":
        angles = 2 * np.pi * np.arange(num_classes) / num_classes
        centers = np.zeros((num_classes, d))
        centers[:, 0] = class_separation * np.cos(angles)
        centers[:, 1] = class_separation * np.sin(angles)
        x = centers[y] + rng.standard_normal((n, d))
    elif kind == "two-moons-like":
        t = rng.uniform(0.0, np.pi, n)
        odd = (y % 2).astype(bool)
        px = np.where(odd, y - np.cos(t), y + np.cos(t))
        py = np.where(odd, 0.5 - np.sin(t), np.sin(t))
        x = 0.15 * rng.standard_normal((n, d))
        x[:, 0] += class_separation * px
        x[:, 1] += class_separation * py
    else:
        background = np.full(d, 1.0 / d)
        topics = rng.dirichlet(np.full(d, 0.1), size=num_classes)
        dists = background + class_separation * topics
        dists /= dists.sum(axis=1, keepdims=True)
        doc_len = 50
        x = np.stack([rng.multinomial(doc_len, dists[c]) for c in y]) / doc_len
    return LabeledDataset.clean(x, y, num_classes, task_metric)


# -- file ingestion -----------------------------------------------------------

def _row_to_label(raw, line):
    raw = raw.strip() if isinstance(raw, str) else raw
    if raw is None or raw == "":
        raise ParseError("missing label", line)
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"label {raw!r} is not an integer", line) from None
    if value != int(value) or value < 0:
        raise ParseError(f"label {raw!r} is not a non-negative integer", line)
    return int(value)


def _parse_features(values, line):
    try:
        feats = [float(v) for v in values]
    except (TypeError, ValueError):
        raise ParseError("non-numeric feature value", line) from None
    if not all(math.isfinite(v) for v in feats):
        raise ParseError("non-finite feature value", line)
    return feats


def load_dataset(path, format=None, num_classes=None, task_metric="accuracy"):
    """Read a CSV (``f0,...,f{d-1},label`` header) or JSONL file as a clean dataset."""
    path = str(path)
    if format is None:
        format = "jsonl" if path.endswith((".jsonl", ".json")) else "csv"
    if format not in ("csv", "jsonl"):
        raise InvalidConfigError(f"unknown format {format!r}")
    rows, labels = [], []
    with open(path, newline="") as fh:
        if format == "csv":
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header:
                raise InvalidInputError(f"{path}: empty file")
            if header[-1].strip() != "label" or len(header) < 2:
                raise SchemaError(f"{path}: header must be f0,...,f{{d-1}},label")
            d = len(header) - 1
            for line, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) == d:
                    raise ParseError("missing label", line)
                if len(rec) != d + 1:
                    raise SchemaError(f"line {line}: expected {d + 1} columns, got {len(rec)}")
                rows.append(_parse_features(rec[:-1], line))
                labels.append(_row_to_label(rec[-1], line))
        else:
            d = None
            for line, text in enumerate(fh, start=1):
                if not text.strip():
                    continue
                try:
                    obj = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line) from None
                if not isinstance(obj, dict) or "features" not in obj:
                    raise ParseError("object needs a 'features' array", line)
                if "label" not in obj:
                    raise ParseError("missing label", line)
                feats = _parse_features(obj["features"], line)
                if d is None:
                    d = len(feats)
                elif len(feats) != d:
                    raise SchemaError(f"line {line}: expected {d} features, got {len(feats)}")
                if isinstance(obj["label"], bool) or not isinstance(obj["label"], (int, float, str)):
                    raise ParseError("label must be an integer", line)
                rows.append(feats)
                labels.append(_row_to_label(str(obj["label"]), line))
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = max(int(labels.max()) + 1, 2)
    return LabeledDataset.clean(np.asarray(rows), labels, num_classes, task_metric)


def save_dataset(ds, path, format=None):
    """Write observed labels and features in the CSV/JSONL ingestion format."""
    path = str(path)
    if format is None:
        format = "jsonl" if path.endswith((".jsonl", ".json")) else "csv"
    with open(path, "w", newline="") as fh:
        if format == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"f{j}" for j in range(ds.dim)] + ["label"])
            for x, y in zip(ds.features, ds.observed_labels):
                writer.writerow([repr(float(v)) for v in x] + [int(y)])
        elif format == "jsonl":
            for x, y in zip(ds.features, ds.observed_labels):
                fh.write(json.dumps({"features": [float(v) for v in x], "label": int(y)}) + "\n")
        else:
            raise InvalidConfigError(f"unknown format {format!r}")


def dump_dataset(ds, path):
    """Full JSON dump; oracle fields live under a separate ``oracle`` key."""
    doc = {
        "schema_version": DUMP_SCHEMA_VERSION,
        "num_classes": ds.num_classes,
        "task_metric": ds.task_metric,
        "features": ds.features.tolist(),
        "observed_labels": ds.observed_labels.tolist(),
        "oracle": {
            "true_labels": ds.true_labels.tolist(),
            "noise_flags": ds.noise_flags.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_dump(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != DUMP_SCHEMA_VERSION:
        raise SchemaError(f"unsupported dataset dump version {doc.get('schema_version')}")
    oracle = doc["oracle"]
    return LabeledDataset(
        np.asarray(doc["features"], dtype=np.float64).reshape(len(doc["observed_labels"]), -1),
        doc["observed_labels"],
        oracle["true_labels"],
        oracle["noise_flags"],
        doc["num_classes"],
        doc["task_metric"],
    )


# -- splitting and corruption -------------------------------------------------

def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_train_val(ds, spec):
    """Seeded shuffle, then hold out ``round(val_fraction * N)`` samples."""
    n = len(ds)
    if n < 10:
        raise InvalidInputError(f"need at least 10 samples to split, got {n}")
    n_val = _round_half_up(spec.val_fraction * n)
    if not 0 < n_val < n:
        raise InvalidInputError(f"val_fraction {spec.val_fraction} leaves an empty split for N={n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


def split_three_way(ds, val_fraction, test_fraction, seed):
    """Train / validation / test partition from one seeded permutation."""
    n = len(ds)
    n_val = _round_half_up(val_fraction * n)
    n_test = _round_half_up(test_fraction * n)
    if n_val < 1 or n_test < 1 or n_val + n_test >= n:
        raise InvalidInputError(
            f"fractions val={val_fraction}, test={test_fraction} are infeasible for N={n}"
        )
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    val_idx = np.sort(perm[n_test:n_test + n_val])
    train_idx = np.sort(perm[n_test + n_val:])
    return ds.subset(train_idx), ds.subset(val_idx), ds.subset(test_idx)


def inject_noise(ds, rate, seed):
    """Corrupt exactly ``floor(rate * N)`` labels, each moved to a different class."""
    if not (0.0 <= rate <= 0.5):
        raise InvalidConfigError(f"noise rate must lie in [0, 0.5], got {rate}")
    n = len(ds)
    k = int(math.floor(rate * n + 1e-9))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=k, replace=False)
    shift = rng.integers(1, ds.num_classes, size=k)
    observed = ds.true_labels.copy()
    observed[chosen] = (ds.true_labels[chosen] + shift) % ds.num_classes
    return ds.with_observed(observed)
