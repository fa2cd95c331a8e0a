"""Training loop, evaluation metrics and learning-curve diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cnn import AdamState, Model, adam_step, softmax_cross_entropy
from .dataset import DatasetSplit, LabeledSample, fmt_float
from .errors import EmptyEval, NonFiniteLoss, ParseError, ShapeMismatch
from .fetch import atomic_write
from .rng import Rng, derive_seed

log = logging.getLogger(__name__)

EVAL_CHUNK = 256
CURVE_HEADER = "epoch,train_loss,train_acc,test_loss,test_acc"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    eval_every: int = 1
    early_stop_patience: int = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be >= 0")


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


@dataclass
class LearningCurve:
    points: list[CurvePoint] = field(default_factory=list)
    optimizer_steps: int = 0
    best_epoch: int | None = None

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)


# ---------------------------------------------------------------------------

def _stack(samples: Sequence[LabeledSample]):
    x = np.stack([s.image for s in samples])[:, None, :, :]
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


def _eval_pass(model: Model, x, y):
    """Mean loss, accuracy and predictions in eval mode."""
    total = 0.0
    preds = []
    for i in range(0, len(y), EVAL_CHUNK):
        probs = model.forward(x[i:i + EVAL_CHUNK], train=False)
        loss, _ = softmax_cross_entropy(model.logits(), y[i:i + EVAL_CHUNK])
        total += loss * len(probs)
        preds.append(np.argmax(probs, axis=1))
    pred = np.concatenate(preds)
    return total / len(y), float(np.mean(pred == y)), pred


def train(model: Model, split: DatasetSplit, cfg: TrainConfig,
          log_line: Callable[[str], None] | None = None) -> tuple[Model, LearningCurve]:
    """Mini-batch Adam training on ``split.train`` with evaluation on ``split.test``.

    Epoch ``e`` visits the training set in the order given by
    ``Rng(cfg.seed ^ e).permutation``; dropout masks come from a separate
    stream seeded from ``cfg.seed``. With ``early_stop_patience > 0`` the
    returned model is the snapshot with the best test accuracy (earliest on
    ties).
    """
    x_tr, y_tr = _stack(split.train)
    x_te, y_te = _stack(split.test)
    if x_tr.shape[1:] != model.input_shape:
        raise ShapeMismatch(f"images {x_tr.shape[1:]} vs model input {model.input_shape}")
    if split.n_classes != model.n_classes:
        raise ShapeMismatch(f"{split.n_classes} classes in data, model outputs {model.n_classes}")
    emit = log_line or log.info

    dropout_rng = Rng(derive_seed(cfg.seed, 0xD20))
    state = AdamState()
    curve = LearningCurve()
    best_acc, best_params, stale = -1.0, None, 0
    n = len(y_tr)

    for epoch in range(1, cfg.max_epochs + 1):
        order = Rng(cfg.seed ^ epoch).permutation(n)
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            model.forward(x_tr[idx], train=True, rng=dropout_rng)
            grads = model.backward(y_tr[idx])
            if not math.isfinite(model.last_loss):
                raise NonFiniteLoss(epoch, batch, cfg.learning_rate)
            adam_step(model.parameters(), grads, state, lr=cfg.learning_rate)
        curve.optimizer_steps = state.t

        if epoch % cfg.eval_every:
            continue
        tr_loss, tr_acc, _ = _eval_pass(model, x_tr, y_tr)
        te_loss, te_acc, _ = _eval_pass(model, x_te, y_te)
        if not (math.isfinite(tr_loss) and math.isfinite(te_loss)):
            raise NonFiniteLoss(epoch, -1, cfg.learning_rate)
        curve.points.append(CurvePoint(epoch, tr_loss, tr_acc, te_loss, te_acc))
        emit(f"epoch={epoch} train_acc={fmt_float(tr_acc)} test_acc={fmt_float(te_acc)} "
             f"loss={fmt_float(tr_loss)}")

        if cfg.early_stop_patience:
            if te_acc > best_acc:
                best_acc, best_params, stale = te_acc, model.snapshot(), 0
                curve.best_epoch = epoch
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break

    if cfg.early_stop_patience and best_params is not None:
        model.restore(best_params)
    return model, curve


# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    class_names: tuple[str, ...]
    confusion: np.ndarray          # rows: true class, cols: predicted class
    overall_accuracy: float
    per_class: list[float | None]  # recall; None when the class has no samples
    n_samples: int

    @classmethod
    def from_confusion(cls, confusion, class_names) -> "EvalReport":
        confusion = np.asarray(confusion, dtype=np.int64)
        total = int(confusion.sum())
        if total == 0:
            raise EmptyEval("no samples to evaluate")
        rows = confusion.sum(axis=1)
        recall = [None if rows[i] == 0 else float(confusion[i, i] / rows[i])
                  for i in range(len(rows))]
        report = cls(tuple(class_names), confusion, float(np.trace(confusion) / total), recall, total)
        report.check()
        return report

    def check(self):
        assert self.confusion.sum() == self.n_samples
        assert self.overall_accuracy == float(np.trace(self.confusion) / self.n_samples)

    def to_text(self) -> str:
        lines = [f"n_samples={self.n_samples} overall_accuracy={fmt_float(self.overall_accuracy)}"]
        for i, name in enumerate(self.class_names):
            r = self.per_class[i]
            lines.append(f"class={name} n={int(self.confusion[i].sum())} "
                         f"detection_probability={'undefined' if r is None else fmt_float(r)}")
        lines.append("confusion rows=true cols=predicted: " + " ".join(self.class_names))
        for name, row in zip(self.class_names, self.confusion):
            lines.append(f"{name} " + " ".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        head = "class,n,detection_probability," + ",".join(f"pred_{c}" for c in self.class_names)
        rows = [head]
        for i, name in enumerate(self.class_names):
            r = self.per_class[i]
            rows.append(f"{name},{int(self.confusion[i].sum())},{'' if r is None else fmt_float(r)},"
                        + ",".join(str(int(v)) for v in self.confusion[i]))
        rows.append(f"overall,{self.n_samples},{fmt_float(self.overall_accuracy)},"
                    + ",".join("" for _ in self.class_names))
        return "\n".join(rows) + "\n"


def confusion_matrix(true, pred, n_classes) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true), np.asarray(pred)), 1)
    return cm


def evaluate(model: Model, samples: Sequence[LabeledSample]) -> EvalReport:
    """Argmax predictions (ties to the lowest class index) against labels."""
    if not samples:
        raise EmptyEval("no samples to evaluate")
    x, y = _stack(samples)
    _, _, pred = _eval_pass(model, x, y)
    return EvalReport.from_confusion(confusion_matrix(y, pred, model.n_classes), model.class_names)


# ---------------------------------------------------------------------------

def _slope(xs, ys) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    dx = xs - xs.mean()
    denom = float(np.dot(dx, dx))
    return 0.0 if denom == 0 else float(np.dot(dx, ys - ys.mean()) / denom)


def diagnose_overfitting(curve: LearningCurve, gap_threshold: float = 0.15, window: int = 5,
                         slope_noise: float = 0.002) -> str:
    """Classify the tail of a learning curve.

    Rules, checked in order on the last ``window`` logged points:

    * ``overfitting``: mean(train_acc - test_acc) > gap_threshold and the
      train-accuracy slope is not negative beyond ``slope_noise`` per epoch;
    * ``underfitting``: final train accuracy < 0.6;
    * ``converged``: gap <= gap_threshold and both accuracy slopes are within
      ``slope_noise`` per epoch;
    * otherwise ``undetermined`` (also when fewer than ``window`` points exist).
    """
    if len(curve) < window:
        return "undetermined"
    tail = curve.points[-window:]
    epochs = [p.epoch for p in tail]
    train_acc = [p.train_acc for p in tail]
    test_acc = [p.test_acc for p in tail]
    gap = float(np.mean(np.subtract(train_acc, test_acc)))
    s_train, s_test = _slope(epochs, train_acc), _slope(epochs, test_acc)
    if gap > gap_threshold and s_train >= -slope_noise:
        return "overfitting"
    if train_acc[-1] < 0.6:
        return "underfitting"
    if gap <= gap_threshold and abs(s_train) < slope_noise and abs(s_test) < slope_noise:
        return "converged"
    return "undetermined"


# ---------------------------------------------------------------------------

def curve_csv_text(curve: LearningCurve) -> str:
    rows = [CURVE_HEADER]
    for p in curve:
        rows.append(",".join([str(p.epoch), fmt_float(p.train_loss), fmt_float(p.train_acc),
                              fmt_float(p.test_loss), fmt_float(p.test_acc)]))
    return "\n".join(rows) + "\n"


def emit_curve_csv(curve: LearningCurve, path) -> Path:
    path = Path(path)
    atomic_write(path, curve_csv_text(curve).encode("ascii"))
    return path


def read_curve_csv(path) -> LearningCurve:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CURVE_HEADER:
        raise ParseError(f"expected header {CURVE_HEADER!r}", line=1)
    points = []
    for k, line in enumerate(lines[1:], 2):
        parts = line.split(",")
        try:
            points.append(CurvePoint(int(parts[0]), *(float(v) for v in parts[1:5])))
        except (ValueError, IndexError, TypeError):
            raise ParseError("malformed curve row", line=k) from None
        if len(parts) != 5:
            raise ParseError("expected 5 fields", line=k)
    return LearningCurve(points)
