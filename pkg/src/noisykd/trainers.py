"""Training regimes: no KD, vanilla KD, self-distillation, Co-Distill and Co-Distill with label refinement.

All trainers see ``TrainView`` objects (features + observed labels).  Oracle
information, when supplied through :class:`Oracle`, is used only to fill the
reporting fields (``clean_val_*`` and ``relabel_stats``); the one
exception is the validation noise mask that the refinement discriminator is
trained on.
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum

import numpy as np

from . import mathkernels as mk
from .data import LabeledDataset
from .errors import DegenerateLabelsError, InvalidConfigError, InvalidInputError, TrainingDivergenceError
from .metrics import label_agreement, precision_recall, task_score
from .model import (
    OptimizerState,
    backward_and_step,
    forward,
    init_model,
    student_dims,
    teacher_dims,
)
from .refinement import collect_features, flag_noisy, relabel, train_discriminator
from .seeding import derive_seed, stream

log = logging.getLogger(__name__)


class Method(str, Enum):
    NO_KD = "NO_KD"
    VANILLA = "VANILLA"
    SELF_DSTL = "SELF_DSTL"
    CD = "CD"
    CD_LR = "CD_LR"


@dataclass(frozen=True)
class TrainConfig:
    method: Method = Method.CD
    alpha: float = 0.5
    epochs: int = 30
    refine_epoch: int = 2
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0
    early_stopping_patience: int = 5
    hidden: int = 64
    activation: str = "tanh"
    temperature: float = 1.0
    n_trees: int = 100
    max_depth: int = 8
    flag_threshold: float = 0.5

    def __post_init__(self):
        try:
            object.__setattr__(self, "method", Method(self.method))
        except ValueError:
            raise InvalidConfigError(f"unknown method {self.method!r}") from None
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.epochs < 1:
            raise InvalidConfigError("epochs must be positive")
        if not 1 <= self.refine_epoch < self.epochs:
            raise InvalidConfigError(
                f"refine_epoch must satisfy 1 <= refine_epoch < epochs, got {self.refine_epoch}"
            )
        if self.learning_rate <= 0 or self.batch_size < 1 or self.hidden < 2:
            raise InvalidConfigError("learning_rate, batch_size and hidden must be positive")
        if self.early_stopping_patience < 1:
            raise InvalidConfigError("early_stopping_patience must be >= 1")
        if self.temperature <= 0:
            raise InvalidConfigError("temperature must be positive")

    def to_dict(self):
        d = asdict(self)
        d["method"] = self.method.value
        return d


@dataclass(frozen=True)
class Oracle:
    """Hidden ground truth for reporting only."""

    val_true_labels: np.ndarray = None
    train_true_labels: np.ndarray = None
    train_noise_flags: np.ndarray = None

    @classmethod
    def from_datasets(cls, train, val):
        return cls(val.true_labels, train.true_labels, train.noise_flags)


@dataclass
class EpochRecord:
    epoch: int  # 1-based: number of completed epochs
    train_loss: float
    val_loss: float
    val_metric: float
    clean_val_metric: float = None
    clean_val_loss: float = None
    teacher_val_loss: float = None
    teacher_val_metric: float = None

    def __post_init__(self):
        if not (np.isfinite(self.train_loss) and np.isfinite(self.val_loss)):
            raise TrainingDivergenceError(f"non-finite loss at epoch {self.epoch}")


@dataclass
class ExperimentResult:
    method: str
    config: dict
    records: list = field(default_factory=list)
    best_epoch: int = None
    best_val_metric: float = None
    teacher_best_epoch: int = None
    teacher_records: list = field(default_factory=list)
    relabel_stats: dict = None
    test_metrics: dict = field(default_factory=dict)
    # in-memory only
    student: object = field(default=None, repr=False, compare=False)
    teacher: object = field(default=None, repr=False, compare=False)
    refine_checkpoint: tuple = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            "method": self.method,
            "config": self.config,
            "records": [asdict(r) for r in self.records],
            "teacher_records": [asdict(r) for r in self.teacher_records],
            "best_epoch": self.best_epoch,
            "best_val_metric": self.best_val_metric,
            "teacher_best_epoch": self.teacher_best_epoch,
            "relabel_stats": self.relabel_stats,
            "test_metrics": self.test_metrics,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            method=d["method"],
            config=d["config"],
            records=[EpochRecord(**r) for r in d["records"]],
            teacher_records=[EpochRecord(**r) for r in d.get("teacher_records", [])],
            best_epoch=d["best_epoch"],
            best_val_metric=d["best_val_metric"],
            teacher_best_epoch=d.get("teacher_best_epoch"),
            relabel_stats=d.get("relabel_stats"),
            test_metrics=d.get("test_metrics", {}),
        )


# -- shared machinery ---------------------------------------------------------

def _as_view(ds):
    return ds.view() if isinstance(ds, LabeledDataset) else ds


def _check_compatible(train, val):
    if train.features.shape[1] != val.features.shape[1] or train.num_classes != val.num_classes:
        raise InvalidInputError("train and validation sets disagree on dimension or class count")


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _evaluate(model, view):
    logits = forward(model, view.features)
    loss = mk.cross_entropy(view.labels, mk.softmax(logits))
    pred = np.argmax(logits, axis=1)
    return loss, task_score(view.task_metric, pred, view.labels), pred


class _Checkpoint:
    """Best-by-noisy-validation bookkeeping plus patience-based stopping."""

    def __init__(self, patience, min_epochs=0):
        self.patience = patience
        self.min_epochs = min_epochs
        self.best_metric = -np.inf
        self.best_epoch = None
        self.model = None

    def update(self, epoch, metric, model):
        if metric > self.best_metric:
            self.best_metric, self.best_epoch, self.model = metric, epoch, model.copy()

    def should_stop(self, epoch):
        return epoch >= self.min_epochs and epoch - self.best_epoch >= self.patience


def _record(epoch, train_loss, student, val, oracle, teacher=None):
    val_loss, val_metric, pred = _evaluate(student, val)
    rec = EpochRecord(epoch, float(train_loss), val_loss, val_metric)
    if oracle is not None and oracle.val_true_labels is not None:
        rec.clean_val_metric = task_score(val.task_metric, pred, oracle.val_true_labels)
        probs = mk.softmax(forward(student, val.features))
        rec.clean_val_loss = mk.cross_entropy(oracle.val_true_labels, probs)
    if teacher is not None:
        rec.teacher_val_loss, rec.teacher_val_metric, _ = _evaluate(teacher, val)
    return rec


def _ce_epoch(model, opt, view, batch_rng, batch_size, soft_logits=None, alpha=1.0, temperature=1.0):
    """One epoch of SGD on CE, or on the distillation loss against fixed ``soft_logits``."""
    total = 0.0
    for idx in _batches(len(view), batch_size, batch_rng):
        x, y = view.features[idx], view.labels[idx]
        logits = forward(model, x)
        if soft_logits is None:
            loss = mk.cross_entropy(y, mk.softmax(logits))
            grad = mk.cross_entropy_grad(y, logits)
        else:
            loss = mk.student_loss(y, soft_logits[idx], logits, alpha, temperature)
            grad = mk.student_loss_grad(y, soft_logits[idx], logits, alpha, temperature)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(f"non-finite training loss after {opt.step_count} steps")
        backward_and_step(model, x, grad, opt)
        total += loss * len(idx)
    return total / len(view)


def _new_student(view, cfg):
    dims = student_dims(view.features.shape[1], view.num_classes, cfg.hidden)
    return init_model(dims, derive_seed(cfg.seed, "init-student"), cfg.activation)


def _new_teacher(view, cfg):
    dims = teacher_dims(view.features.shape[1], view.num_classes, cfg.hidden)
    return init_model(dims, derive_seed(cfg.seed, "init-teacher"), cfg.activation)


def _fit_ce(model, train, val, cfg, shuffle_name, oracle, callback, role):
    """Plain CE training with early stopping; returns (best checkpoint, records)."""
    opt = OptimizerState(cfg.learning_rate)
    rng = stream(cfg.seed, shuffle_name)
    ckpt = _Checkpoint(cfg.early_stopping_patience)
    records = []
    for e in range(cfg.epochs):
        train_loss = _ce_epoch(model, opt, train, rng, cfg.batch_size)
        rec = _record(e + 1, train_loss, model, val, oracle)
        records.append(rec)
        ckpt.update(e + 1, rec.val_metric, model)
        if callback is not None:
            callback(role, e, model)
        if ckpt.should_stop(e + 1):
            break
    return ckpt, records


# -- the five regimes ----------------------------------------------------------

def train_no_kd(train, val, cfg, *, oracle=None, callback=None):
    """Student trained on observed labels with cross-entropy only."""
    train, val = _as_view(train), _as_view(val)
    _check_compatible(train, val)
    student = _new_student(train, cfg)
    ckpt, records = _fit_ce(student, train, val, cfg, "shuffle", oracle,
                            _student_cb(callback), "student")
    return ExperimentResult(
        Method.NO_KD.value, cfg.to_dict(), records, ckpt.best_epoch, ckpt.best_metric,
        student=ckpt.model,
    )


def _student_cb(callback):
    if callback is None:
        return None
    return lambda role, e, model: callback(e, None, model)


def train_vanilla_kd(train, val, cfg, *, oracle=None, callback=None):
    """Fully train a CE teacher, then distill the student from its frozen logits."""
    train, val = _as_view(train), _as_view(val)
    _check_compatible(train, val)
    teacher = _new_teacher(train, cfg)
    t_ckpt, t_records = _fit_ce(teacher, train, val, cfg, "shuffle-teacher", oracle, None, "teacher")
    teacher = t_ckpt.model
    t_logits = forward(teacher, train.features)

    student = _new_student(train, cfg)
    opt = OptimizerState(cfg.learning_rate)
    rng = stream(cfg.seed, "shuffle")
    ckpt = _Checkpoint(cfg.early_stopping_patience)
    records = []
    for e in range(cfg.epochs):
        train_loss = _ce_epoch(student, opt, train, rng, cfg.batch_size,
                               soft_logits=t_logits, alpha=cfg.alpha, temperature=cfg.temperature)
        rec = _record(e + 1, train_loss, student, val, oracle)
        records.append(rec)
        ckpt.update(e + 1, rec.val_metric, student)
        if callback is not None:
            callback(e, teacher, student)
        if ckpt.should_stop(e + 1):
            break
    return ExperimentResult(
        Method.VANILLA.value, cfg.to_dict(), records, ckpt.best_epoch, ckpt.best_metric,
        teacher_best_epoch=t_ckpt.best_epoch, teacher_records=t_records,
        student=ckpt.model, teacher=teacher,
    )


def train_self_distill(train, val, cfg, *, oracle=None, callback=None):
    """CE warm-up for ``refine_epoch`` epochs, then distill from the best warm checkpoint's logits."""
    train, val = _as_view(train), _as_view(val)
    _check_compatible(train, val)
    student = _new_student(train, cfg)
    opt = OptimizerState(cfg.learning_rate)
    rng = stream(cfg.seed, "shuffle")
    ckpt = _Checkpoint(cfg.early_stopping_patience)
    warm = _Checkpoint(cfg.early_stopping_patience)
    records = []
    self_logits = None
    for e in range(cfg.epochs):
        if e == cfg.refine_epoch:
            self_logits = forward(warm.model, train.features)
            self_logits.setflags(write=False)
        train_loss = _ce_epoch(student, opt, train, rng, cfg.batch_size, soft_logits=self_logits,
                               alpha=cfg.alpha, temperature=cfg.temperature)
        rec = _record(e + 1, train_loss, student, val, oracle)
        records.append(rec)
        ckpt.update(e + 1, rec.val_metric, student)
        if e < cfg.refine_epoch:
            warm.update(e + 1, rec.val_metric, student)
        if callback is not None:
            callback(e, self_logits, student)
        if ckpt.should_stop(e + 1):
            break
    return ExperimentResult(
        Method.SELF_DSTL.value, cfg.to_dict(), records, ckpt.best_epoch, ckpt.best_metric,
        student=ckpt.model,
    )


def _co_distill_epoch(teacher, student, t_opt, s_opt, view, rng, cfg, epoch):
    total = 0.0
    for idx in _batches(len(view), cfg.batch_size, rng):
        x, y = view.features[idx], view.labels[idx]
        # both forward passes precede both updates
        t_logits = forward(teacher, x)
        s_logits = forward(student, x)
        loss = mk.student_loss(y, t_logits, s_logits, cfg.alpha, cfg.temperature)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(f"non-finite training loss in epoch {epoch}")
        s_grad = mk.student_loss_grad(y, t_logits, s_logits, cfg.alpha, cfg.temperature)
        t_grad = mk.teacher_loss_grad(y, t_logits, s_logits, cfg.alpha, epoch, cfg.temperature)
        backward_and_step(student, x, s_grad, s_opt)
        backward_and_step(teacher, x, t_grad, t_opt)
        total += loss * len(idx)
    return total / len(view)


def _refine(teacher, student, train, val, val_noise_flags, cfg, oracle):
    """Flag suspicious training labels and let the teacher relabel them."""
    stats = {"refine_epoch": cfg.refine_epoch, "skipped": False}
    val_feats = collect_features(teacher, student, val)
    try:
        disc = train_discriminator(
            val_feats, val_noise_flags, derive_seed(cfg.seed, "discriminator"),
            n_trees=cfg.n_trees, max_depth=cfg.max_depth,
        )
    except DegenerateLabelsError as exc:
        log.warning("label refinement skipped: %s", exc)
        stats.update(skipped=True, skip_reason=str(exc), flagged_count=0)
        return train, stats
    train_feats = collect_features(teacher, student, train)
    flags = flag_noisy(disc, train_feats, cfg.flag_threshold)
    refined = relabel(train, flags, teacher)
    stats["flagged_count"] = int(flags.sum())
    stats["changed_count"] = int(np.sum(refined.labels != train.labels))
    stats["val_discriminator_accuracy"] = float(
        np.mean(flag_noisy(disc, val_feats, cfg.flag_threshold) == np.asarray(val_noise_flags))
    )
    if oracle is not None and oracle.train_true_labels is not None:
        precision, recall = precision_recall(flags, oracle.train_noise_flags)
        stats["flag_precision"] = precision
        stats["flag_recall"] = recall
        stats["agreement_before"] = label_agreement(train.labels, oracle.train_true_labels)
        stats["agreement_after"] = label_agreement(refined.labels, oracle.train_true_labels)
    return refined, stats


def _co_distill(train, val, cfg, oracle, callback, val_noise_flags=None):
    train, val = _as_view(train), _as_view(val)
    _check_compatible(train, val)
    refine = val_noise_flags is not None
    teacher = _new_teacher(train, cfg)
    student = _new_student(train, cfg)
    t_opt = OptimizerState(cfg.learning_rate)
    s_opt = OptimizerState(cfg.learning_rate)
    rng = stream(cfg.seed, "shuffle")
    ckpt = _Checkpoint(cfg.early_stopping_patience, min_epochs=cfg.refine_epoch + 1 if refine else 0)
    t_ckpt = _Checkpoint(cfg.early_stopping_patience)
    records = []
    stats = None
    snapshot = None
    for e in range(cfg.epochs):
        train_loss = _co_distill_epoch(teacher, student, t_opt, s_opt, train, rng, cfg, e)
        rec = _record(e + 1, train_loss, student, val, oracle, teacher=teacher)
        records.append(rec)
        ckpt.update(e + 1, rec.val_metric, student)
        t_ckpt.update(e + 1, rec.teacher_val_metric, teacher)
        if callback is not None:
            callback(e, teacher, student)
        if refine and e + 1 == cfg.refine_epoch:
            snapshot = (teacher.copy(), student.copy())
            train, stats = _refine(teacher, student, train, val, val_noise_flags, cfg, oracle)
        if ckpt.should_stop(e + 1):
            break
    method = Method.CD_LR if refine else Method.CD
    return ExperimentResult(
        method.value, cfg.to_dict(), records, ckpt.best_epoch, ckpt.best_metric,
        teacher_best_epoch=t_ckpt.best_epoch, relabel_stats=stats,
        student=ckpt.model, teacher=t_ckpt.model, refine_checkpoint=snapshot,
    )


def train_co_distill(train, val, cfg, *, oracle=None, callback=None):
    """Joint teacher/student training where each learns from the other's frozen output."""
    return _co_distill(train, val, cfg, oracle, callback)


def train_cd_lr(train, val, cfg, *, val_noise_flags=None, oracle=None, callback=None):
    """Co-Distill with one round of discriminator-driven relabeling after ``refine_epoch`` epochs.

    ``val_noise_flags`` defaults to ``val.noise_flags`` when ``val`` is a full
    :class:`LabeledDataset`; it is the only oracle input that steers training.
    """
    if val_noise_flags is None:
        if not isinstance(val, LabeledDataset):
            raise InvalidInputError("label refinement needs validation noise flags")
        val_noise_flags = val.noise_flags
    val_noise_flags = np.asarray(val_noise_flags, dtype=bool)
    if val_noise_flags.shape != (len(val),):
        raise InvalidInputError("need one noise flag per validation sample")
    return _co_distill(train, val, cfg, oracle, callback, val_noise_flags=val_noise_flags)


TRAINERS = {
    Method.NO_KD: train_no_kd,
    Method.VANILLA: train_vanilla_kd,
    Method.SELF_DSTL: train_self_distill,
    Method.CD: train_co_distill,
    Method.CD_LR: train_cd_lr,
}


def train(train_set, val_set, cfg, *, val_noise_flags=None, oracle=None, callback=None):
    """Dispatch on ``cfg.method``."""
    fn = TRAINERS[cfg.method]
    if cfg.method is Method.CD_LR:
        return fn(train_set, val_set, cfg, val_noise_flags=val_noise_flags, oracle=oracle,
                  callback=callback)
    return fn(train_set, val_set, cfg, oracle=oracle, callback=callback)


def with_method(cfg, method, **changes):
    return replace(cfg, method=Method(method), **changes)


CONFIG_FIELDS = tuple(f.name for f in fields(TrainConfig))
