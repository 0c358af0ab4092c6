"""Per-class non-conformity scores.

Convention throughout: a larger score means a less conforming
(node, class) pair, and a class is admitted to a prediction set when its
score is at most the calibrated threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._table import KeyedTable
from .base_predictor import ProbabilityTable
from .errors import ConfigError, NumericError
from .temporal_graph import (
    NeighborQueryParams,
    TemporalGraph,
    aggregate_pairs,
    temporal_neighbor_pairs,
    topological_neighbor_sums,
)


class ScoreTable(KeyedTable):
    def __init__(self, ids: Sequence, scores):
        scores = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise NumericError("non-conformity scores must be finite")
        if np.any(scores < 0):
            raise NumericError("non-conformity scores must be non-negative")
        super().__init__(ids, scores)


@dataclass(frozen=True)
class DiffusionParams:
    """Mixing weights for the topological and temporal neighbour terms."""

    lambda1: float = 0.01
    lambda2: float = 0.01
    neighbor_params: NeighborQueryParams = field(default_factory=lambda: NeighborQueryParams(1, 2))
    temporal_window: float = 2

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            lam = getattr(self, name)
            if not 0.0 <= lam <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {lam!r}")
        if self.lambda1 + self.lambda2 > 1.0:
            raise ConfigError(
                f"lambda1 + lambda2 must be <= 1, got {self.lambda1} + {self.lambda2}"
            )
        if not isinstance(self.neighbor_params, NeighborQueryParams):
            raise ConfigError("neighbor_params must be a NeighborQueryParams")
        NeighborQueryParams(1, self.temporal_window)  # validates the window


def tps_scores(p: ProbabilityTable) -> ScoreTable:
    return ScoreTable(p.ids, 1.0 - p.values)


def _sorted_cumulative(probs: np.ndarray):
    # stable sort on -p: equal probabilities keep ascending class order
    order = np.argsort(-probs, axis=1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=1)
    return order, sorted_p, np.cumsum(sorted_p, axis=1)


def _aps_values(probs: np.ndarray, u=None) -> np.ndarray:
    order, sorted_p, cum = _sorted_cumulative(probs)
    if u is None:
        sorted_scores = cum
    else:
        before = np.concatenate([np.zeros((cum.shape[0], 1)), cum[:, :-1]], axis=1)
        sorted_scores = before + u[:, None] * sorted_p
    scores = np.empty_like(probs)
    np.put_along_axis(scores, order, sorted_scores, axis=1)
    return scores


def aps_scores(p: ProbabilityTable, randomize: bool = False, rng_seed: int = 0) -> ScoreTable:
    """Adaptive prediction set scores.

    The score of class ``k`` is the mass of classes ranked above it plus
    ``u * p_k``; ``u = 1`` unless ``randomize`` is set, in which case one
    ``u ~ U(0, 1)`` is drawn per row from ``rng_seed``.
    """
    u = np.random.default_rng(rng_seed).uniform(size=len(p)) if randomize else None
    return ScoreTable(p.ids, _aps_values(p.values, u))


def raps_scores(p: ProbabilityTable, k_reg: int = 1, lam_reg: float = 0.01) -> ScoreTable:
    """APS plus ``lam_reg * max(0, rank - k_reg)`` with 1-based descending rank."""
    K = p.num_classes
    if not 1 <= k_reg <= K:
        raise ConfigError(f"k_reg must lie in 1..{K}, got {k_reg}")
    if lam_reg < 0:
        raise ConfigError(f"lam_reg must be >= 0, got {lam_reg}")
    order, _, cum = _sorted_cumulative(p.values)
    sorted_scores = cum + lam_reg * np.maximum(0, np.arange(1, K + 1) - k_reg)
    scores = np.empty_like(cum)
    np.put_along_axis(scores, order, sorted_scores, axis=1)
    return ScoreTable(p.ids, scores)


def _neighbor_mean(sums, counts):
    mean = np.zeros_like(sums)
    has = counts > 0
    mean[has] = sums[has] / counts[has, None]
    return mean, has


def daps_scores(
    base: ScoreTable, g: TemporalGraph, lambda1: float, t_st: float = 0
) -> ScoreTable:
    """One-hop neighbour smoothing: ``(1 - lambda1) * s + lambda1 * mean(neighbours)``."""
    if not 0.0 <= lambda1 <= 1.0:
        raise ConfigError(f"lambda1 must lie in [0, 1], got {lambda1!r}")
    rows = g.rows(base.ids)
    values, mask = base.aligned(g.occurrences)
    mean, has = _neighbor_mean(
        *topological_neighbor_sums(g, rows, NeighborQueryParams(1, t_st), values, mask)
    )
    out = base.values.copy()
    out[has] = (1 - lambda1) * base.values[has] + lambda1 * mean[has]
    return ScoreTable(base.ids, out)


def diffusion_scores(base: ScoreTable, g: TemporalGraph, dp: DiffusionParams) -> ScoreTable:
    """Single-step topological and temporal diffusion of per-class scores.

    ``s' = (1 - l1 - l2) s + l1 mean(topological) + l2 mean(temporal)``.  A
    term whose neighbourhood is empty hands its weight back to ``s``.
    """
    rows = g.rows(base.ids)
    n = rows.size
    values, mask = base.aligned(g.occurrences)
    topo_mean, has_topo = _neighbor_mean(
        *topological_neighbor_sums(g, rows, dp.neighbor_params, values, mask)
    )
    temp_mean, has_temp = _neighbor_mean(
        *aggregate_pairs(*temporal_neighbor_pairs(g, rows, dp.temporal_window), values, n, mask)
    )
    w_self = 1.0 - np.where(has_topo, dp.lambda1, 0.0) - np.where(has_temp, dp.lambda2, 0.0)
    out = w_self[:, None] * base.values + dp.lambda1 * topo_mean + dp.lambda2 * temp_mean
    return ScoreTable(base.ids, out)


def true_label_scores(s: ScoreTable, g: TemporalGraph, ids: Iterable) -> np.ndarray:
    ids = list(ids)
    labels = g.label_array(ids)
    return s.take(ids)[np.arange(len(ids)), labels]


SCORE_KINDS = ("tps", "aps", "raps", "daps", "diffusion")


def compute_scores(
    kind: str,
    probs: ProbabilityTable,
    g: TemporalGraph,
    dp: DiffusionParams | None = None,
    *,
    base_kind: str = "tps",
    k_reg: int = 1,
    lam_reg: float = 0.01,
    seed: int = 0,
) -> ScoreTable:
    """Dispatch on a score name; ``base_kind`` picks the input of the graph scores."""
    if kind not in SCORE_KINDS:
        raise ConfigError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")
    if kind in ("daps", "diffusion"):
        if base_kind not in ("tps", "aps", "raps"):
            raise ConfigError(f"base score must be tps, aps or raps, got {base_kind!r}")
        base = compute_scores(base_kind, probs, g, k_reg=k_reg, lam_reg=lam_reg, seed=seed)
        dp = dp or DiffusionParams()
        if kind == "daps":
            return daps_scores(base, g, dp.lambda1, dp.neighbor_params.t_st)
        return diffusion_scores(base, g, dp)
    if kind == "tps":
        return tps_scores(probs)
    if kind == "aps":
        return aps_scores(probs)
    return raps_scores(probs, k_reg, lam_reg)
