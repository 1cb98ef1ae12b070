"""Softmax, cross-entropy, KL divergences and the distillation losses.

Every function accepts either a single vector (shape ``(C,)``) or a batch of
row vectors (shape ``(N, C)``).  Batched losses are averaged over rows; the
``*_grad`` helpers return per-row gradients with respect to the logits so the
model can average them itself.
"""

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

PROB_FLOOR = 1e-12


def _as_logits(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim not in (1, 2) or z.shape[-1] < 2:
        raise InvalidInputError(f"logits must have >= 2 classes, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits contain non-finite values")
    return z


def _as_probs(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim not in (1, 2) or p.shape[-1] < 2:
        raise InvalidInputError(f"distribution must have >= 2 classes, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInputError("distribution entries must be finite and non-negative")
    return p


def floor_probs(p):
    """Clamp entries to at least PROB_FLOOR and renormalize."""
    p = np.maximum(_as_probs(p), PROB_FLOOR)
    return p / p.sum(axis=-1, keepdims=True)


def softmax(z, temperature=1.0):
    z = _as_logits(z) / temperature
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        if np.any(labels != np.round(labels)):
            raise InvalidInputError("labels must be integer class indices")
        labels = labels.astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise InvalidInputError(f"label out of range [0, {num_classes})")
    return labels


def cross_entropy(label, p, reduce=True):
    """``-ln p[label]`` on the floored distribution.

    With a batch ``p`` of shape (N, C) and ``label`` of shape (N,), returns
    the mean over rows, or the per-row values when ``reduce`` is False.
    """
    p = floor_probs(p)
    label = _check_labels(label, p.shape[-1])
    if p.ndim == 1:
        if label.ndim != 0:
            raise InvalidInputError("single distribution needs a scalar label")
        return float(-np.log(p[label]))
    if label.shape != (p.shape[0],):
        raise InvalidInputError("need one label per row")
    per_row = -np.log(p[np.arange(p.shape[0]), label])
    return float(per_row.mean()) if reduce else per_row


def _kl_rows(p, q):
    return np.sum(p * (np.log(p) - np.log(q)), axis=-1)


def kl_div(p, q, reduce=True):
    """Forward KL(p || q)."""
    p, q = floor_probs(p), floor_probs(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {q.shape}")
    out = np.maximum(_kl_rows(p, q), 0.0)
    if out.ndim == 0:
        return float(out)
    return float(out.mean()) if reduce else out


def symmetric_kl(p, q, reduce=True):
    """KL(p || q) + KL(q || p)."""
    p, q = floor_probs(p), floor_probs(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {q.shape}")
    out = np.maximum(_kl_rows(p, q) + _kl_rows(q, p), 0.0)
    if out.ndim == 0:
        return float(out)
    return float(out.mean()) if reduce else out


def _check_alpha(alpha):
    if not (0.0 <= alpha <= 1.0):
        raise InvalidConfigError(f"alpha must lie in [0, 1], got {alpha}")


def student_loss(y, t_logits, s_logits, alpha, temperature=1.0):
    """alpha * CE(y, S) + (1 - alpha) * symmetric KL(T, S), averaged over rows."""
    _check_alpha(alpha)
    ps = softmax(s_logits, temperature)
    pt = softmax(t_logits, temperature)
    ce = cross_entropy(y, softmax(s_logits))
    if alpha == 1.0:
        return ce
    return alpha * ce + (1.0 - alpha) * symmetric_kl(pt, ps)


def teacher_loss(y, t_logits, s_logits, alpha, epoch, temperature=1.0):
    """Teacher counterpart of :func:`student_loss`; epoch 0 is pure CE."""
    _check_alpha(alpha)
    if epoch < 0:
        raise InvalidInputError("epoch must be >= 0")
    if epoch == 0:
        alpha = 1.0
    return student_loss(y, s_logits, t_logits, alpha, temperature)


def teacher_alpha(alpha, epoch):
    return 1.0 if epoch == 0 else alpha


# -- gradients with respect to logits ---------------------------------------

def _onehot(labels, num_classes):
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy_grad(y, logits):
    """Per-row gradient of CE(y, softmax(logits)): ``p - onehot(y)``."""
    logits = np.atleast_2d(_as_logits(logits))
    labels = np.atleast_1d(_check_labels(y, logits.shape[1]))
    return softmax(logits) - _onehot(labels, logits.shape[1])


def symmetric_kl_grad(fixed_logits, moving_logits, temperature=1.0):
    """Per-row gradient of symmetric KL(softmax(fixed), softmax(moving)) w.r.t. ``moving_logits``.

    The fixed side is treated as a constant (stop-gradient).
    """
    fixed = np.atleast_2d(_as_logits(fixed_logits))
    moving = np.atleast_2d(_as_logits(moving_logits))
    if fixed.shape != moving.shape:
        raise InvalidInputError(f"shape mismatch {fixed.shape} vs {moving.shape}")
    pf = floor_probs(softmax(fixed, temperature))
    pm = floor_probs(softmax(moving, temperature))
    log_ratio = np.log(pm) - np.log(pf)
    reverse = np.sum(pm * log_ratio, axis=1, keepdims=True)
    grad = (pm - pf) + pm * (log_ratio - reverse)
    return grad / temperature


def student_loss_grad(y, t_logits, s_logits, alpha, temperature=1.0):
    """Per-row gradient of :func:`student_loss` w.r.t. the student logits."""
    _check_alpha(alpha)
    grad = alpha * cross_entropy_grad(y, s_logits)
    if alpha < 1.0:
        grad += (1.0 - alpha) * symmetric_kl_grad(t_logits, s_logits, temperature)
    return grad


def teacher_loss_grad(y, t_logits, s_logits, alpha, epoch, temperature=1.0):
    """Per-row gradient of :func:`teacher_loss` w.r.t. the teacher logits."""
    return student_loss_grad(y, s_logits, t_logits, teacher_alpha(alpha, epoch), temperature)
