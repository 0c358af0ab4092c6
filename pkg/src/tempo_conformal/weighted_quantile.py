"""Quantile thresholds and prediction sets.

Three thresholds are available: the split-conformal rank quantile, the
fixed-weight quantile for non-exchangeable data (the test point keeps a unit
weight at +inf), and a soft, differentiable quantile whose per-rank weights
can be learned.  ``math.inf`` is the sentinel for "admit every class".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericError
from .temporal_graph import TemporalNodeId

INF = math.inf
_MASS_TOL = 1e-12


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")


def _as_scores(calib_scores) -> np.ndarray:
    s = np.asarray(calib_scores, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise ConfigError("calibration scores are empty")
    if not np.all(np.isfinite(s)):
        raise NumericError("calibration scores must be finite")
    return s


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


class WeightVector:
    """Rank-indexed quantile weights, parameterised by softmax logits."""

    def __init__(self, logits):
        logits = np.array(logits, dtype=np.float64).reshape(-1)
        if logits.size == 0:
            raise ConfigError("weight vector needs at least one entry")
        if not np.all(np.isfinite(logits)):
            raise NumericError("logits must be finite")
        logits.setflags(write=False)
        self.logits = logits

    @classmethod
    def uniform(cls, n: int) -> WeightVector:
        return cls(np.zeros(n))

    @property
    def n(self) -> int:
        return self.logits.size

    @cached_property
    def weights(self) -> np.ndarray:
        w = softmax(self.logits)
        w.setflags(write=False)
        return w

    def __repr__(self):
        return f"WeightVector(n={self.n})"


@dataclass(frozen=True)
class QuantileResult:
    eta: float
    beta: np.ndarray
    sorted_scores: np.ndarray
    weights: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    temperature: float = field(repr=False)
    selection: str = field(repr=False)
    cum_sign: np.ndarray = field(repr=False)

    def grad_logits(self) -> np.ndarray:
        """d eta / d logits, by the chain rule through beta, Gamma, cumsum and softmax."""
        T = self.temperature
        d_sel = -self.beta * (self.sorted_scores - self.eta) / T  # d eta / d (Gamma or omega)
        if self.selection == "gamma":
            d_omega = np.cumsum((d_sel * self.cum_sign)[::-1])[::-1]
        else:
            d_omega = d_sel
        w = self.weights
        return w * (d_omega - np.dot(w, d_omega))


SELECTIONS = ("gamma", "weight")


def soft_quantile(
    calib_scores, w: WeightVector, alpha: float, T: float, selection: str = "gamma"
) -> QuantileResult:
    """Convex combination of sorted scores, concentrated near the 1 - alpha rank.

    ``Gamma_i = |cumsum(omega)_i - (1 - alpha)|`` and
    ``beta = softmax(-Gamma / T)``.  ``selection="weight"`` uses
    ``softmax(-omega / T)`` instead.
    """
    s = _as_scores(calib_scores)
    _check_alpha(alpha)
    if not T > 0:
        raise ConfigError(f"temperature must be > 0, got {T!r}")
    if selection not in SELECTIONS:
        raise ConfigError(f"selection must be one of {SELECTIONS}, got {selection!r}")
    if s.size != w.n:
        raise ConfigError(f"{s.size} scores but {w.n} weights")
    sorted_scores = np.sort(s, kind="stable")
    omega = w.weights
    diff = np.cumsum(omega) - (1.0 - alpha)
    gamma = np.abs(diff)
    beta = softmax(-(gamma if selection == "gamma" else omega) / T)
    eta = float(np.dot(sorted_scores, beta))
    # convex combination; clamp rounding spill outside [min, max]
    eta = min(max(eta, float(sorted_scores[0])), float(sorted_scores[-1]))
    return QuantileResult(
        eta=eta,
        beta=beta,
        sorted_scores=sorted_scores,
        weights=omega,
        gamma=gamma,
        temperature=float(T),
        selection=selection,
        cum_sign=np.sign(diff),
    )


def hard_quantile(calib_scores, alpha: float) -> float:
    """The ceil((n + 1)(1 - alpha))-th smallest score, or ``INF`` if that rank exceeds n."""
    s = _as_scores(calib_scores)
    _check_alpha(alpha)
    n = s.size
    k = max(1, math.ceil((n + 1) * (1.0 - alpha) - 1e-10))
    if k > n:
        return INF
    return float(np.partition(s, k - 1)[k - 1])


def nex_quantile(calib_scores, weights, alpha: float, test_weight: float = 1.0) -> float:
    """Weighted quantile with the test point's mass placed at +inf.

    Sample ``i`` gets mass ``weights[i] / (sum(weights) + test_weight)``.
    Returns the smallest score whose cumulative mass reaches ``1 - alpha``.
    """
    s = _as_scores(calib_scores)
    _check_alpha(alpha)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != s.size:
        raise ConfigError(f"{s.size} scores but {w.size} weights")
    if np.any(w < 0) or test_weight < 0:
        raise ConfigError("weights must be non-negative")
    total = w.sum() + test_weight
    if not total > 0:
        raise ConfigError("weights sum to zero")
    order = np.argsort(s, kind="stable")
    cum = np.cumsum(w[order]) / total
    hit = np.flatnonzero(cum >= (1.0 - alpha) - _MASS_TOL)
    if hit.size == 0:
        return INF
    return float(s[order[hit[0]]])


def nex_quantile_batch(score_matrix, weights, alpha: float, test_weight: float = 1.0) -> np.ndarray:
    """Row-wise :func:`nex_quantile` for an ``(R, n)`` matrix of score draws."""
    S = np.asarray(score_matrix, dtype=np.float64)
    _check_alpha(alpha)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if S.ndim != 2 or S.shape[1] != w.size:
        raise ConfigError(f"score matrix shape {S.shape} does not match {w.size} weights")
    order = np.argsort(S, axis=1, kind="stable")
    cum = np.cumsum(w[order], axis=1) / (w.sum() + test_weight)
    reached = cum >= (1.0 - alpha) - _MASS_TOL
    first = np.argmax(reached, axis=1)
    rows = np.arange(S.shape[0])
    out = S[rows, order[rows, first]]
    return np.where(reached.any(axis=1), out, INF)


def decay_weights(n: int, decay: float) -> np.ndarray:
    """``decay ** (n - i)`` for time-ordered samples ``i = 1..n`` (oldest first)."""
    if not 0.0 < decay <= 1.0:
        raise ConfigError(f"decay must lie in (0, 1], got {decay!r}")
    return decay ** np.arange(n - 1, -1, -1, dtype=np.float64)


def fixed_weight_quantile(calib_scores, decay: float, alpha: float) -> float:
    """Geometric-decay weighted quantile; ``decay=1`` gives :func:`hard_quantile`."""
    s = _as_scores(calib_scores)
    return nex_quantile(s, decay_weights(s.size, decay), alpha)


@dataclass(frozen=True)
class PredictionSet:
    node: TemporalNodeId | None
    admitted: frozenset
    quantile_used: float

    def __len__(self):
        return len(self.admitted)

    def __contains__(self, k):
        return k in self.admitted


def build_prediction_set(scores, threshold: float, node=None) -> PredictionSet:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(scores)):
        raise NumericError("class scores must be finite")
    if threshold == INF:
        admitted = frozenset(range(scores.size))
    else:
        admitted = frozenset(np.flatnonzero(scores <= threshold).tolist())
    return PredictionSet(node, admitted, float(threshold))


def build_prediction_sets(table, ids: Sequence, threshold: float) -> list[PredictionSet]:
    scores = table.take(ids)
    return [build_prediction_set(row, threshold, v) for v, row in zip(ids, scores)]


# -- swap argument used as a property oracle ------------------------------


def _weighted_level_quantile(scores: np.ndarray, weights: np.ndarray, level: float) -> float:
    order = np.argsort(scores, kind="stable")
    cum = np.cumsum(weights[order])
    hit = np.flatnonzero(cum >= level - _MASS_TOL)
    return float(scores[order[hit[0]]]) if hit.size else INF


def exchange_violations(scores, weights, alpha: float | None = None) -> list[tuple]:
    """Swaps of the test point (last entry) that raise the weighted quantile.

    Only swaps with a calibration point whose score is below the test score
    are examined; those are the ones that matter for miscoverage.  With
    ``alpha=None`` the quantile is the weighted sum ``sum(w_i s_i)``, so a
    swap with position ``k`` changes it by ``(w_last - w_k)(s_last - s_k)``;
    otherwise the weighted ``1 - alpha`` quantile is used.  Returns
    ``(k, before, after)`` for every swap where ``before < after``.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if s.size != w.size or s.size < 2:
        raise ConfigError("scores and weights need the same length >= 2")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ConfigError(f"weights must be non-negative and sum to 1, got sum {w.sum()!r}")
    if alpha is not None:
        _check_alpha(alpha)

    def quantile(values):
        if alpha is None:
            return float(np.dot(w, values))
        return _weighted_level_quantile(values, w, 1.0 - alpha)

    last = s.size - 1
    before = quantile(s)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(s))))
    found = []
    for k in range(last):
        if not s[last] > s[k]:
            continue
        swapped = s.copy()
        swapped[k], swapped[last] = s[last], s[k]
        after = quantile(swapped)
        if before < after - tol:
            found.append((k, before, after))
    return found


def quantile_exchange_check(scores, weights, alpha: float | None = None) -> bool:
    """True when no test-point swap raises the weighted quantile."""
    return not exchange_violations(scores, weights, alpha)
