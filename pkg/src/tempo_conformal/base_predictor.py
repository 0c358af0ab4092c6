"""Class-probability sources for the calibration pipeline.

Any upstream temporal model can be plugged in through a probability file.
:func:`frequency_classifier` is a neighbour-vote stand-in so the pipeline
runs end to end without one.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from ._table import KeyedTable
from .errors import ConfigError, ParseError, ValidationError
from .temporal_graph import (
    NeighborQueryParams,
    TemporalGraph,
    TemporalNodeId,
    topological_neighbor_sums,
)

SUM_TOLERANCE = 1e-6


class ProbabilityTable(KeyedTable):
    """Per-occurrence probability vectors on the simplex.

    Rows whose sum is off by at most ``SUM_TOLERANCE`` are renormalised;
    anything further off is rejected.
    """

    def __init__(self, ids: Sequence, probs):
        probs = np.array(probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValidationError("probabilities must be a 2-D array")
        if not np.all(np.isfinite(probs)):
            raise ValidationError("probabilities must be finite")
        if np.any(probs < 0):
            raise ValidationError("probabilities must be non-negative")
        sums = probs.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > SUM_TOLERANCE)
        if bad.size:
            i = int(bad[0])
            raise ValidationError(f"row {i} sums to {sums[i]!r}, not 1 within {SUM_TOLERANCE}")
        off = sums != 1.0
        probs[off] /= sums[off, None]
        super().__init__(ids, probs)


def _parse_float(value, line, field):
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"field {field!r}: expected number, got {value!r}", line) from None
    if not math.isfinite(x):
        raise ParseError(f"field {field!r}: non-finite value {value!r}", line)
    return x


def load_probabilities(
    records: Iterable[Sequence], num_classes: int | None = None, *, first_line: int = 1
) -> ProbabilityTable:
    """Parse ``(node, time, p_0, ..., p_{K-1})`` records."""
    ids, rows = [], []
    for i, rec in enumerate(records):
        line = first_line + i
        if isinstance(rec, (str, bytes)) or len(rec) < 4:
            raise ParseError(f"expected node, time and at least 2 probabilities, got {rec!r}", line)
        width = len(rec) - 2
        if num_classes is None:
            num_classes = width
        elif width != num_classes:
            raise ParseError(f"expected {num_classes} probabilities, got {width}", line)
        try:
            node, time = int(str(rec[0]).strip()), int(str(rec[1]).strip())
        except ValueError:
            raise ParseError(f"node and time must be integers, got {rec[:2]!r}", line) from None
        ids.append(TemporalNodeId(node, time))
        rows.append([_parse_float(x, line, f"p{k}") for k, x in enumerate(rec[2:])])
    probs = np.array(rows, dtype=np.float64).reshape(len(rows), num_classes or 0)
    return ProbabilityTable(ids, probs)


def frequency_classifier(
    g: TemporalGraph, train_ids: Iterable, smoothing: float = 1.0, t_st: float = math.inf
) -> ProbabilityTable:
    """Laplace-smoothed label vote of one-hop neighbours that are in ``train_ids``.

    Occurrences with no labelled neighbour get the global training label
    histogram.  ``t_st`` is the time radius of the neighbour query; the
    default looks at the whole history.
    """
    train_ids = list(train_ids)
    if not train_ids:
        raise ConfigError("frequency_classifier needs a non-empty training set")
    if smoothing < 0:
        raise ConfigError(f"smoothing must be >= 0, got {smoothing}")
    K = g.num_classes
    n = g.num_occurrences
    train_rows = g.rows(train_ids)
    onehot = np.zeros((n, K))
    onehot[train_rows, g.label_array(train_ids)] = 1.0
    mask = np.zeros(n, dtype=bool)
    mask[train_rows] = True

    all_rows = np.arange(n)
    counts_by_class, n_votes = topological_neighbor_sums(
        g, all_rows, NeighborQueryParams(1, t_st), onehot, source_mask=mask
    )

    global_hist = onehot[train_rows].sum(axis=0)
    global_hist /= global_hist.sum()
    probs = np.empty((n, K))
    has = n_votes > 0
    probs[has] = (counts_by_class[has] + smoothing) / (n_votes[has, None] + K * smoothing)
    probs[~has] = global_hist
    return ProbabilityTable(g.occurrences, probs)
