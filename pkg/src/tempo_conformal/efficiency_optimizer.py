"""Learning quantile weights that shrink prediction sets.

The loss is a sigmoid relaxation of the total set size at the soft quantile
threshold.  Weights are trained by full-batch gradient descent and the epoch
kept is the one with the smallest validation set size among those meeting a
coverage floor, falling back to uniform weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError
from .nonconformity import ScoreTable
from .weighted_quantile import SELECTIONS, WeightVector, soft_quantile


@dataclass(frozen=True)
class OptimizerConfig:
    epochs: int = 100
    learning_rate: float = 0.01
    T: float = 0.01
    tau: float = 0.1
    alpha: float = 0.05
    seed: int = 0
    coverage_floor: float | None = None  # None means 1 - alpha
    selection: str = "gamma"

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not self.T > 0 or not self.tau > 0:
            raise ConfigError("T and tau must be > 0")
        if self.coverage_floor is not None and not 0 < self.coverage_floor < 1:
            raise ConfigError(f"coverage_floor must lie in (0, 1), got {self.coverage_floor!r}")
        if self.selection not in SELECTIONS:
            raise ConfigError(f"selection must be one of {SELECTIONS}")

    @property
    def floor(self) -> float:
        return 1.0 - self.alpha if self.coverage_floor is None else self.coverage_floor


class TraceRecord(NamedTuple):
    epoch: int
    loss: float
    val_coverage: float
    val_set_size: float


@dataclass
class TrainingTrace:
    records: list = field(default_factory=list)
    selected_epoch: int = 0  # 0 is the uniform initialisation
    threshold: float = float("nan")
    uniform_coverage: float = float("nan")
    uniform_set_size: float = float("nan")

    def __len__(self):
        return len(self.records)


def loss_and_grad(class_scores: np.ndarray, calib_scores, w: WeightVector, cfg: OptimizerConfig):
    """Efficiency loss on an ``(m, K)`` block of class scores and its logit gradient."""
    class_scores = np.asarray(class_scores, dtype=np.float64)
    if not np.all(np.isfinite(class_scores)):
        raise NumericError("class scores must be finite")
    q = soft_quantile(calib_scores, w, cfg.alpha, cfg.T, cfg.selection)
    sig = expit((q.eta - class_scores) / cfg.tau)
    loss = float(sig.sum())
    d_eta = float((sig * (1.0 - sig)).sum()) / cfg.tau
    return loss, d_eta * q.grad_logits(), q


def efficiency_loss(
    score_table: ScoreTable,
    ids: Sequence,
    w: WeightVector,
    calib_scores,
    cfg: OptimizerConfig,
):
    """Sum over ``ids`` and classes of ``sigmoid((eta - s) / tau)``, with its gradient."""
    loss, grad, _ = loss_and_grad(score_table.take(ids), calib_scores, w, cfg)
    return loss, grad


def _labels_of(labels: Mapping, ids: Sequence) -> np.ndarray:
    try:
        return np.fromiter((labels[v] for v in ids), dtype=np.int64, count=len(ids))
    except KeyError as exc:
        raise ConfigError(f"occurrence {exc.args[0]} has no label") from None


def set_metrics(class_scores: np.ndarray, labels: np.ndarray, threshold: float):
    """Coverage and mean set size of ``{k : s_k <= threshold}``."""
    admitted = class_scores <= threshold
    coverage = float(admitted[np.arange(labels.size), labels].mean())
    return coverage, float(admitted.sum(axis=1).mean())


def train_weights(
    score_table: ScoreTable,
    calib_train_ids: Sequence,
    calib_valid_ids: Sequence,
    cfg: OptimizerConfig,
    labels: Mapping,
):
    """Run gradient descent on the efficiency loss.

    Calibration scores (true-class scores of ``calib_train_ids``) are fixed
    before the loop.  Returns the selected :class:`WeightVector` and the
    :class:`TrainingTrace`; ``trace.threshold`` is the soft quantile of the
    selected weights, to be used as a hard threshold at test time.
    """
    calib_train_ids, calib_valid_ids = list(calib_train_ids), list(calib_valid_ids)
    if not calib_train_ids or not calib_valid_ids:
        raise ConfigError("calibration train and validation sets must be non-empty")
    train_block = score_table.take(calib_train_ids)
    train_labels = _labels_of(labels, calib_train_ids)
    calib_scores = train_block[np.arange(train_labels.size), train_labels]
    valid_block = score_table.take(calib_valid_ids)
    valid_labels = _labels_of(labels, calib_valid_ids)

    def threshold_of(w):
        return soft_quantile(calib_scores, w, cfg.alpha, cfg.T, cfg.selection).eta

    w = WeightVector.uniform(calib_scores.size)
    trace = TrainingTrace()
    trace.uniform_coverage, trace.uniform_set_size = set_metrics(
        valid_block, valid_labels, threshold_of(w)
    )
    best_w = w
    best_size = trace.uniform_set_size if trace.uniform_coverage >= cfg.floor else np.inf

    logits = w.logits.copy()
    for epoch in range(1, cfg.epochs + 1):
        loss, grad, _ = loss_and_grad(train_block, calib_scores, WeightVector(logits), cfg)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite loss or gradient at epoch {epoch}")
        with np.errstate(over="ignore"):
            logits = logits - cfg.learning_rate * grad
        current = WeightVector(logits)
        cov, size = set_metrics(valid_block, valid_labels, threshold_of(current))
        trace.records.append(TraceRecord(epoch, loss, cov, size))
        if cov >= cfg.floor and size < best_size:
            best_w, best_size, trace.selected_epoch = current, size, epoch
    trace.threshold = threshold_of(best_w)
    return best_w, trace
