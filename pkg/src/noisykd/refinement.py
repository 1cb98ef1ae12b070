"""Loss-feature label refinement.

A bagged ensemble of Gini decision trees is trained on per-sample
cross-entropy values (teacher, student) of the validation set, whose noise
flags are known, and then flags suspicious training samples.  Flagged samples
get the teacher's argmax prediction as their new label.
"""

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import mathkernels as mk
from .data import LabeledDataset
from .errors import DegenerateLabelsError, InvalidInputError, NotFittedError
from .model import forward


@dataclass
class LossFeatures:
    teacher_ce: np.ndarray
    student_ce: np.ndarray

    def __len__(self):
        return len(self.teacher_ce)

    def matrix(self):
        return np.column_stack([self.teacher_ce, self.student_ce])

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != 2:
            raise InvalidInputError(f"loss features must have shape (N, 2), got {m.shape}")
        return cls(m[:, 0].copy(), m[:, 1].copy())


def _features_and_labels(ds):
    if isinstance(ds, LabeledDataset):
        return ds.features, ds.observed_labels
    return ds.features, ds.labels


def collect_features(teacher, student, ds):
    """Per-sample CE of both models against the observed labels, in dataset order."""
    x, y = _features_and_labels(ds)
    for m in (teacher, student):
        if m.input_dim != x.shape[1]:
            raise InvalidInputError(f"model expects {m.input_dim} features, data has {x.shape[1]}")
    t_ce = mk.cross_entropy(y, mk.softmax(forward(teacher, x)), reduce=False)
    s_ce = mk.cross_entropy(y, mk.softmax(forward(student, x)), reduce=False)
    return LossFeatures(t_ce, s_ce)


# -- decision trees -----------------------------------------------------------

@dataclass
class _Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    vote: np.ndarray       # leaf majority: 1.0 noisy, 0.0 clean

    def apply(self, x):
        node = np.zeros(len(x), dtype=np.int64)
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return self.vote[node]
            rows = np.nonzero(inner)[0]
            go_left = x[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])


def _gini(pos, total):
    p = pos / np.maximum(total, 1)
    return 2.0 * p * (1.0 - p)


def _grow_tree(x, y, max_depth, n_thresholds, rng):
    feature, threshold, left, right, vote = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (vote, 0.0)):
            lst.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        n, pos = len(idx), yn.sum()
        vote[node] = 1.0 if pos * 2 >= n else 0.0
        if depth >= max_depth or pos == 0 or pos == n:
            continue
        parent = _gini(pos, n)
        best = None
        for f in range(x.shape[1]):
            values = np.unique(x[idx, f])
            if len(values) < 2:
                continue
            cands = 0.5 * (values[:-1] + values[1:])
            if len(cands) > n_thresholds:
                cands = np.sort(rng.choice(cands, size=n_thresholds, replace=False))
            goes_left = x[idx, f][:, None] <= cands[None, :]
            n_left = goes_left.sum(axis=0)
            pos_left = (goes_left & yn[:, None]).sum(axis=0)
            n_right, pos_right = n - n_left, pos - pos_left
            impurity = (n_left * _gini(pos_left, n_left) + n_right * _gini(pos_right, n_right)) / n
            k = int(np.argmin(impurity))
            if impurity[k] < parent - 1e-12 and (best is None or impurity[k] < best[0]):
                best = (impurity[k], f, cands[k])
        if best is None:
            continue
        _, f, thr = best
        mask = x[idx, f] <= thr
        lnode, rnode = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, lnode, rnode
        stack.append((rnode, idx[~mask], depth + 1))
        stack.append((lnode, idx[mask], depth + 1))
    return _Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(vote),
    )


@dataclass
class Discriminator:
    """Random forest over the two loss features; ``score`` is the noisy-vote fraction."""

    n_trees: int = 100
    max_depth: int = 8
    n_thresholds: int = 32
    seed: int = 0
    trees: list = field(default_factory=list, repr=False)

    @property
    def trained(self):
        return bool(self.trees)

    def score(self, features):
        if not self.trained:
            raise NotFittedError("discriminator has not been trained")
        x = features.matrix() if isinstance(features, LossFeatures) else np.asarray(features, float)
        votes = np.zeros(len(x))
        for tree in self.trees:
            votes += tree.apply(x)
        return votes / len(self.trees)


def train_discriminator(features, flags, seed, n_trees=100, max_depth=8, n_thresholds=32,
                        min_per_class=10):
    x = features.matrix() if isinstance(features, LossFeatures) else np.asarray(features, float)
    y = np.asarray(flags, dtype=bool)
    if len(x) != len(y):
        raise InvalidInputError(f"{len(x)} feature rows but {len(y)} flags")
    n_noisy = int(y.sum())
    n_clean = len(y) - n_noisy
    if min(n_noisy, n_clean) < max(min_per_class, 1):
        raise DegenerateLabelsError(
            f"need >= {min_per_class} noisy and clean samples, got {n_noisy} noisy / {n_clean} clean"
        )
    rng = np.random.default_rng(seed)
    disc = Discriminator(n_trees, max_depth, n_thresholds, seed)
    n = len(y)
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(x[boot], y[boot], max_depth, n_thresholds, rng))
    disc.trees = trees
    return disc


def flag_noisy(d, features, threshold=0.5):
    return d.score(features) >= threshold


def relabel(ds, flags, teacher):
    """Return a copy of ``ds`` whose flagged labels are the teacher's argmax."""
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (len(ds),):
        raise InvalidInputError(f"need {len(ds)} flags, got {flags.shape}")
    x, y = _features_and_labels(ds)
    new = y.copy()
    if flags.any():
        # np.argmax breaks ties toward the lowest class index
        new[flags] = np.argmax(forward(teacher, x[flags]), axis=1)
    if isinstance(ds, LabeledDataset):
        return ds.with_observed(new)
    new.setflags(write=False)
    return dataclasses.replace(ds, labels=new)


def write_discriminator_dump(path, features, scores, flags, oracle_flags=None):
    """Per-sample CSV: teacher_ce, student_ce, score, flag[, oracle_flag]."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["teacher_ce", "student_ce", "score", "flag"]
        if oracle_flags is not None:
            header.append("oracle_flag")
        w.writerow(header)
        for i in range(len(features)):
            row = [repr(float(features.teacher_ce[i])), repr(float(features.student_ce[i])),
                   repr(float(scores[i])), int(flags[i])]
            if oracle_flags is not None:
                row.append(int(oracle_flags[i]))
            w.writerow(row)
