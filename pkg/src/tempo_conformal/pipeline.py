"""End-to-end calibration: scores, threshold, test prediction sets and report."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .base_predictor import ProbabilityTable
from .coverage_analysis import EvalReport, evaluate
from .efficiency_optimizer import OptimizerConfig, TrainingTrace, train_weights
from .errors import ConfigError
from .nonconformity import DiffusionParams, ScoreTable, compute_scores, true_label_scores
from .synth import SplitPlan
from .temporal_graph import TemporalGraph
from .weighted_quantile import (
    PredictionSet,
    WeightVector,
    build_prediction_sets,
    fixed_weight_quantile,
    hard_quantile,
)

QUANTILE_KINDS = ("hard", "fixed-weight", "learned")


@dataclass
class CalibrationResult:
    scores: ScoreTable
    threshold: float
    sets: list[PredictionSet]
    report: EvalReport
    weights: WeightVector | None = None
    trace: TrainingTrace | None = None


def calibrate(
    g: TemporalGraph,
    probs: ProbabilityTable,
    plan: SplitPlan,
    *,
    alpha: float = 0.05,
    score_kind: str = "diffusion",
    dp: DiffusionParams | None = None,
    quantile_kind: str = "learned",
    opt: OptimizerConfig | None = None,
    decay: float = 0.99,
    base_kind: str = "tps",
) -> CalibrationResult:
    """Score every occurrence, fix a threshold on the calibration blocks, predict the test block.

    ``hard`` and ``fixed-weight`` use both calibration blocks in time order;
    ``learned`` trains rank weights on the first block, selects on the
    second, and freezes the soft quantile of the selected weights.
    """
    if quantile_kind not in QUANTILE_KINDS:
        raise ConfigError(f"unknown quantile kind {quantile_kind!r}; expected one of {QUANTILE_KINDS}")
    scores = compute_scores(score_kind, probs, g, dp, base_kind=base_kind)
    weights = trace = None
    if quantile_kind == "learned":
        opt = dataclasses.replace(opt or OptimizerConfig(), alpha=alpha)
        weights, trace = train_weights(scores, plan.calib_train, plan.calib_valid, opt, g.labels)
        threshold = trace.threshold
    else:
        calib_ids = sorted(plan.calib_train + plan.calib_valid, key=lambda v: (v.time, v.node))
        calib = true_label_scores(scores, g, calib_ids)
        if quantile_kind == "hard":
            threshold = hard_quantile(calib, alpha)
        else:
            threshold = fixed_weight_quantile(calib, decay, alpha)
    sets = build_prediction_sets(scores, list(plan.test), threshold)
    report = evaluate(sets, g.labels, alpha)
    return CalibrationResult(scores, float(threshold), sets, report, weights, trace)


def set_sizes(sets) -> np.ndarray:
    return np.fromiter((len(s) for s in sets), dtype=np.int64)
