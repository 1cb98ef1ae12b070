"""Accuracy, Matthews correlation and label-agreement statistics."""

import numpy as np

from .errors import InvalidInputError


def _pair(pred, gold):
    pred = np.asarray(pred, dtype=np.int64).ravel()
    gold = np.asarray(gold, dtype=np.int64).ravel()
    if pred.shape != gold.shape:
        raise InvalidInputError(f"length mismatch: {pred.size} vs {gold.size}")
    if pred.size == 0:
        raise InvalidInputError("cannot score empty predictions")
    return pred, gold


def confusion_matrix(pred, gold, num_classes=None):
    """Counts with rows = true class, columns = predicted class."""
    pred, gold = _pair(pred, gold)
    if num_classes is None:
        num_classes = int(max(pred.max(), gold.max())) + 1
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (gold, pred), 1)
    return cm


def accuracy(pred, gold):
    pred, gold = _pair(pred, gold)
    return float(np.mean(pred == gold))


def matthews_corr(pred, gold):
    """Multiclass MCC (Gorodkin's R_K); reduces to the binary formula for 2 classes.

    Returns 0.0 when the denominator vanishes (e.g. a constant predictor).
    """
    cm = confusion_matrix(pred, gold).astype(np.float64)
    n = cm.sum()
    correct = np.trace(cm)
    t = cm.sum(axis=1)  # true-class totals
    p = cm.sum(axis=0)  # predicted totals
    cov_xy = correct * n - t @ p
    cov_xx = n * n - p @ p
    cov_yy = n * n - t @ t
    denom = np.sqrt(cov_xx * cov_yy)
    if denom == 0:
        return 0.0
    return float(cov_xy / denom)


def label_agreement(labels_a, labels_b):
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise InvalidInputError("cannot compare empty label vectors")
    return float(np.mean(a == b))


def task_score(metric, pred, gold):
    if metric == "mcc":
        return matthews_corr(pred, gold)
    if metric == "accuracy":
        return accuracy(pred, gold)
    raise InvalidInputError(f"unknown task metric {metric!r}")


def precision_recall(flagged, truth):
    """Precision and recall of boolean flags against boolean ground truth.

    Empty denominators yield ``None`` rather than a made-up value.
    """
    flagged = np.asarray(flagged, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flagged.shape != truth.shape:
        raise InvalidInputError("length mismatch")
    tp = int(np.sum(flagged & truth))
    n_flag = int(flagged.sum())
    n_true = int(truth.sum())
    precision = tp / n_flag if n_flag else None
    recall = tp / n_true if n_true else None
    return precision, recall
