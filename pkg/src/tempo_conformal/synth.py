"""Synthetic temporal graphs with a structural regime change.

Nodes belong to ``n_classes`` communities and the class label of an
occurrence is its node's community.  Edges come from a preferential
attachment process whose within-community rate drops after the changepoint
by an amount set by ``drift_rate``.  The synthetic base model reads the
step's neighbour communities, so it is accurate while the graph is
homophilous and degrades as homophily fades.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base_predictor import ProbabilityTable
from .errors import ConfigError, ValidationError
from .temporal_graph import TemporalGraph, TemporalNodeId

# within-community edge probability before the changepoint
HOMOPHILY = 0.8
# logit weights of the synthetic model: neighbour-community share, own-class evidence, noise
NEIGHBOR_WEIGHT = 3.0
LABEL_WEIGHT = 0.8
NOISE_SCALE = 1.3


@dataclass(frozen=True)
class SynthConfig:
    n_nodes: int = 300
    n_timesteps: int = 20
    edges_per_step: int = 600
    edge_density: float | None = None  # overrides edges_per_step when set
    n_classes: int = 3
    drift_rate: float = 0.0
    changepoint_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_nodes", "n_timesteps", "edges_per_step", "n_classes"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.n_nodes < 2 * self.n_classes:
            raise ConfigError("need at least two nodes per community")
        if self.edge_density is not None and not 0 < self.edge_density <= 1:
            raise ConfigError(f"edge_density must lie in (0, 1], got {self.edge_density!r}")
        if not 0 <= self.drift_rate <= 1:
            raise ConfigError(f"drift_rate must lie in [0, 1], got {self.drift_rate!r}")
        if not 0 < self.changepoint_fraction < 1:
            raise ConfigError("changepoint_fraction must lie in (0, 1)")

    @property
    def edges_per_step_effective(self) -> int:
        if self.edge_density is None:
            return int(self.edges_per_step)
        pairs = self.n_nodes * (self.n_nodes - 1) // 2
        return max(1, int(round(self.edge_density * pairs)))

    @property
    def changepoint_step(self) -> int:
        return int(math.floor(self.changepoint_fraction * self.n_timesteps))

    def homophily_at(self, step: int) -> float:
        if step < self.changepoint_step:
            return HOMOPHILY
        return HOMOPHILY - self.drift_rate * (2 * HOMOPHILY - 1)


def _pick(rng, members: np.ndarray, degree: np.ndarray, size: int) -> np.ndarray:
    w = degree[members].astype(np.float64)
    return members[rng.choice(members.size, size=size, p=w / w.sum())]


def generate_temporal_graph(cfg: SynthConfig) -> tuple[TemporalGraph, ProbabilityTable]:
    rng = np.random.default_rng(cfg.seed)
    n, K = cfg.n_nodes, cfg.n_classes
    community = rng.permutation(np.arange(n) % K)
    members = [np.flatnonzero(community == k) for k in range(K)]
    degree = np.ones(n, dtype=np.int64)
    m = cfg.edges_per_step_effective

    src_all, dst_all, time_all = [], [], []
    for step in range(cfg.n_timesteps):
        src = _pick(rng, np.arange(n), degree, m)
        same = rng.random(m) < cfg.homophily_at(step)
        hop = rng.integers(1, K, size=m)  # uniform over the other communities
        target = np.where(same, community[src], (community[src] + hop) % K)
        dst = np.empty(m, dtype=np.int64)
        pending = np.arange(m)
        while pending.size:
            for k in range(K):
                sel = pending[target[pending] == k]
                if sel.size:
                    dst[sel] = _pick(rng, members[k], degree, sel.size)
            pending = pending[dst[pending] == src[pending]]
        np.add.at(degree, src, 1)
        np.add.at(degree, dst, 1)
        src_all.append(src)
        dst_all.append(dst)
        time_all.append(np.full(m, step, dtype=np.int64))
    src = np.concatenate(src_all)
    dst = np.concatenate(dst_all)
    time = np.concatenate(time_all)

    g = TemporalGraph(src, dst, time, {}, K)
    labels_by_row = community[g.occ_node]
    labels = {v: int(c) for v, c in zip(g.occurrences, labels_by_row.tolist())}
    g = TemporalGraph(src, dst, time, labels, K)

    # neighbour-community shares of every occurrence within its own step
    rows_src = g.rows(TemporalNodeId(s, t) for s, t in zip(src.tolist(), time.tolist()))
    rows_dst = g.rows(TemporalNodeId(d, t) for d, t in zip(dst.tolist(), time.tolist()))
    share = np.zeros((g.num_occurrences, K))
    np.add.at(share, (rows_src, community[dst]), 1.0)
    np.add.at(share, (rows_dst, community[src]), 1.0)
    share /= share.sum(axis=1, keepdims=True)

    noise = rng.normal(scale=NOISE_SCALE, size=(g.num_occurrences, K))
    logits = NEIGHBOR_WEIGHT * share + noise
    logits[np.arange(g.num_occurrences), labels_by_row] += LABEL_WEIGHT
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return g, ProbabilityTable(g.occurrences, probs)


@dataclass(frozen=True)
class SplitPlan:
    train: tuple
    valid: tuple
    calib_train: tuple
    calib_valid: tuple
    test: tuple

    NAMES = ("train", "valid", "calib_train", "calib_valid", "test")

    def parts(self):
        return tuple(getattr(self, name) for name in self.NAMES)

    def sizes(self):
        return tuple(len(p) for p in self.parts())


DEFAULT_FRACTIONS = (0.5, 0.1, 0.1, 0.1, 0.2)


def chronological_split(g: TemporalGraph, fractions=DEFAULT_FRACTIONS) -> SplitPlan:
    """Cut labelled occurrences, ordered by ``(time, node)``, into five contiguous blocks.

    The first four block sizes are ``floor(fraction * N)``; the test block
    takes the remainder.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 5:
        raise ValidationError(f"expected 5 split fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must be positive and sum to 1, got {fractions}")
    ordered = sorted(g.labels, key=lambda v: (v.time, v.node))
    N = len(ordered)
    sizes = [int(math.floor(f * N + 1e-9)) for f in fractions[:4]]
    sizes.append(N - sum(sizes))
    if min(sizes) == 0:
        raise ConfigError(f"split sizes {tuple(sizes)} leave an empty part ({N} labelled occurrences)")
    cuts = np.cumsum([0] + sizes)
    parts = [tuple(ordered[cuts[i] : cuts[i + 1]]) for i in range(5)]
    return SplitPlan(*parts)
