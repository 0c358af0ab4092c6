"""Coverage metrics, the coverage-gap bound, and the permutation-probability demo."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ValidationError
from .weighted_quantile import nex_quantile_batch


@dataclass(frozen=True)
class EvalReport:
    coverage: float
    efficiency: float
    n_test: int
    alpha: float = float("nan")


def evaluate(sets: Sequence, labels: Mapping, alpha: float = float("nan")) -> EvalReport:
    """Empirical coverage and mean set size over prediction sets."""
    sets = list(sets)
    if not sets:
        raise ConfigError("cannot evaluate an empty sequence of prediction sets")
    covered = 0
    size = 0
    for ps in sets:
        try:
            y = labels[ps.node]
        except KeyError:
            raise ValidationError(f"prediction set for unlabelled occurrence {ps.node}") from None
        covered += y in ps.admitted
        size += len(ps.admitted)
    n = len(sets)
    return EvalReport(coverage=covered / n, efficiency=size / n, n_test=n, alpha=alpha)


def tv_distance_discrete(p, q) -> float:
    """Half the L1 distance between two histograms on the same support."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if p.shape != q.shape:
        raise ValidationError(f"histograms have different supports: {p.size} vs {q.size} bins")
    for h in (p, q):
        if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
            raise ValidationError("histograms must be non-negative and sum to 1")
    return 0.5 * float(np.abs(p - q).sum())


# -- score streams ---------------------------------------------------------


@dataclass(frozen=True)
class RegimeStream:
    """``n`` independent scores per draw; positions from ``changepoint`` on are shifted.

    ``family`` is ``"uniform"`` (``U(0, 1)``) or ``"normal"`` (``N(0, 1)``).
    With ``changepoint=None`` the whole draw is shifted, which is how a test
    stream in a different regime from the calibration stream is described.
    """

    n: int
    shift: float = 0.0
    changepoint: int | None = None
    family: str = "uniform"

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("stream length must be >= 1")
        if self.family not in ("uniform", "normal"):
            raise ConfigError(f"unknown family {self.family!r}")
        if self.changepoint is not None and not 0 <= self.changepoint <= self.n:
            raise ConfigError("changepoint must lie in 0..n")

    @property
    def offsets(self) -> np.ndarray:
        cp = 0 if self.changepoint is None else self.changepoint
        off = np.zeros(self.n)
        off[cp:] = self.shift
        return off

    @property
    def single_regime(self) -> bool:
        return self.shift == 0 or self.changepoint in (0, self.n)

    @property
    def disjoint(self) -> bool:
        return self.family == "uniform" and abs(self.shift) >= 1.0

    def __call__(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "uniform":
            base = rng.random((size, self.n))
        else:
            base = rng.standard_normal((size, self.n))
        return base + self.offsets


# -- coverage-gap bound ----------------------------------------------------


@dataclass(frozen=True)
class GapBoundReport:
    empirical_gap: float
    bound: float
    tv_terms: np.ndarray
    weights_used: np.ndarray
    se: float
    coverage: float


def _bin_index(x: np.ndarray, lo: float, hi: float, n_bins: int) -> np.ndarray:
    if hi <= lo:
        return np.zeros(x.shape, dtype=np.int64)
    idx = np.floor((x - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def swap_tv(a: np.ndarray, b: np.ndarray, n_bins: int, mode: str = "pair") -> float:
    """Histogram TV between draws of ``(a, b)`` and of the swapped ``(b, a)``.

    ``mode="pair"`` bins the two coordinates jointly; ``mode="marginal"``
    compares the one-dimensional histograms of ``a`` and ``b``.
    """
    lo = float(min(a.min(), b.min()))
    hi = float(max(a.max(), b.max()))
    ia, ib = _bin_index(a, lo, hi, n_bins), _bin_index(b, lo, hi, n_bins)
    if mode == "marginal":
        ha = np.bincount(ia, minlength=n_bins) / a.size
        hb = np.bincount(ib, minlength=n_bins) / b.size
        return 0.5 * float(np.abs(ha - hb).sum())
    if mode != "pair":
        raise ConfigError(f"unknown TV mode {mode!r}")
    cells = n_bins * n_bins
    h = np.bincount(ia * n_bins + ib, minlength=cells)
    h_swapped = np.bincount(ib * n_bins + ia, minlength=cells)
    return 0.5 * float(np.abs(h - h_swapped).sum()) / a.size


def _split_weights(weights, n_calib):
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size == n_calib:
        w = np.append(w, 1.0)
    if w.size != n_calib + 1:
        raise ConfigError(f"expected {n_calib} or {n_calib + 1} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigError("weights must be finite and non-negative")
    return w


def gap_bound(tv_terms, weights) -> float:
    """``sum(w_i d_i) / (w_test + sum(w_i))``; a missing test weight counts as 1."""
    d = np.asarray(tv_terms, dtype=np.float64)
    w = _split_weights(weights, d.size)
    return float(np.dot(w[:-1], d) / w.sum())


def estimate_gap_bound(
    calib_stream: Callable,
    test_stream: Callable,
    weights,
    alpha: float,
    n_samples: int = 50_000,
    n_bins: int = 8,
    seed: int = 0,
    tv_mode: str = "pair",
) -> GapBoundReport:
    """Monte-Carlo estimate of the coverage-gap bound and of the realised gap.

    Streams are callables ``stream(rng, size)`` returning ``(size, n)``
    score draws (``n = 1`` for the test stream).  Each swap term is the
    histogram TV between the law of ``(s_i, s_test)`` and its swap.  The
    realised gap is ``(1 - alpha)`` minus the coverage of the weighted
    quantile threshold, measured on independent draws.
    """
    if n_samples < 100:
        raise ConfigError(f"n_samples must be >= 100, got {n_samples}")
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    rng = np.random.default_rng(seed)
    calib = np.asarray(calib_stream(rng, n_samples), dtype=np.float64)
    test = np.asarray(test_stream(rng, n_samples), dtype=np.float64).reshape(n_samples)
    if calib.ndim != 2 or calib.shape[0] != n_samples:
        raise ConfigError("calibration stream must return an (n_samples, n) array")
    if not (np.all(np.isfinite(calib)) and np.all(np.isfinite(test))):
        raise ConfigError("streams must produce finite scores")
    n_calib = calib.shape[1]
    w = _split_weights(weights, n_calib)
    tv = np.array([swap_tv(calib[:, i], test, n_bins, tv_mode) for i in range(n_calib)])
    bound = gap_bound(tv, w)

    calib2 = np.asarray(calib_stream(rng, n_samples), dtype=np.float64)
    test2 = np.asarray(test_stream(rng, n_samples), dtype=np.float64).reshape(n_samples)
    thresholds = nex_quantile_batch(calib2, w[:-1], alpha, test_weight=w[-1])
    coverage = float(np.mean(test2 <= thresholds))
    se = math.sqrt(max(coverage * (1 - coverage), 0.0) / n_samples)
    return GapBoundReport(
        empirical_gap=(1 - alpha) - coverage,
        bound=bound,
        tv_terms=tv,
        weights_used=w,
        se=se,
        coverage=coverage,
    )


def replicate_seed(master: int, index: int) -> int:
    """Seed of replicate ``index``, independent of how replicates are scheduled."""
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


class GapCell(NamedTuple):
    shift: float
    replicate: int
    seed: int
    empirical_gap: float
    bound: float
    se: float


def gap_grid(
    shifts=(0.0, 0.25, 0.5, 1.0),
    n_seeds: int = 20,
    n_calib: int = 19,
    alpha: float = 0.1,
    weights=None,
    n_samples: int = 50_000,
    n_bins: int = 8,
    seed: int = 0,
    tv_mode: str = "pair",
    family: str = "uniform",
    max_workers: int = 1,
) -> list[GapCell]:
    """Bound and realised gap for a calibration regime vs test regimes shifted by ``shifts``."""
    weights = np.ones(n_calib) if weights is None else np.asarray(weights, dtype=np.float64)
    calib_stream = RegimeStream(n_calib, family=family)
    jobs = [
        (shift, r, replicate_seed(seed, i * n_seeds + r))
        for i, shift in enumerate(shifts)
        for r in range(n_seeds)
    ]

    def run(job):
        shift, r, s = job
        rep = estimate_gap_bound(
            calib_stream, RegimeStream(1, shift, family=family), weights, alpha,
            n_samples, n_bins, s, tv_mode,
        )
        return GapCell(float(shift), r, s, rep.empirical_gap, rep.bound, rep.se)

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]


class ShiftSummary(NamedTuple):
    shift: float
    mean_gap: float
    mean_bound: float
    se: float  # standard error of mean_gap


def summarize_grid(cells: Sequence[GapCell]) -> list[ShiftSummary]:
    out = []
    for shift in sorted({c.shift for c in cells}):
        group = [c for c in cells if c.shift == shift]
        k = len(group)
        out.append(
            ShiftSummary(
                shift,
                sum(c.empirical_gap for c in group) / k,
                sum(c.bound for c in group) / k,
                math.sqrt(sum(c.se**2 for c in group)) / k,
            )
        )
    return out


# -- permutation-probability demo ----------------------------------------


class DemoResult(NamedTuple):
    disparity: float
    se: float
    exact: Fraction | None = None


def _hypergeom_pmf(population: int, successes: int, draws: int) -> list[Fraction]:
    total = math.comb(population, draws)
    return [
        Fraction(math.comb(successes, a) * math.comb(population - successes, draws - a), total)
        for a in range(draws + 1)
    ]


def _convolve(p: list, q: list) -> list:
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, x in enumerate(p):
        for j, y in enumerate(q):
            out[i + j] += x * y
    return out


def composition_pmf(n: int, changepoint: int, upper_regime: int, n_calib: int, m0: int) -> list:
    """Exact law of the number of top-half scores among ``n_calib`` chosen positions.

    The model is two regimes with disjoint supports: positions below
    ``changepoint`` form regime 0, the rest regime 1, and ``upper_regime``
    holds the larger scores.  Within a regime every rank order is equally
    likely.  ``m0`` of the chosen positions lie in regime 0.  A single
    regime is ``changepoint == n``.
    """
    h = n // 2
    sizes = (changepoint, n - changepoint)
    lower = 1 - upper_regime
    # the lower regime holds ranks 0..sizes[lower]-1; "high" ranks are n-h..n-1
    high_in = [0, 0]
    high_in[lower] = max(0, sizes[lower] - (n - h))
    high_in[upper_regime] = h - high_in[lower]
    m = (m0, n_calib - m0)
    p0 = _hypergeom_pmf(sizes[0], high_in[0], m[0]) if sizes[0] else [Fraction(1)]
    p1 = _hypergeom_pmf(sizes[1], high_in[1], m[1]) if sizes[1] else [Fraction(1)]
    pmf = _convolve(p0, p1)
    return (pmf + [Fraction(0)] * (n_calib + 1))[: n_calib + 1]


def nonexchangeability_demo(
    stream: RegimeStream,
    n: int | None = None,
    seed: int = 0,
    *,
    n_calib: int | None = None,
    exact: bool = False,
    n_draws: int = 20_000,
    n_perms: int = 20,
) -> DemoResult:
    """Largest change in the probability of the calibration assignment under a permutation.

    The first ``n_calib`` positions of a draw form the calibration set.  Its
    composition is the number of its scores in the top half of the pooled
    draw.  For a permutation of positions, the disparity is
    ``|P(A = a*) - P(A_pi = a*)|`` where ``a*`` is the most likely
    composition of the chronological calibration set.  Exact mode evaluates
    every permutation class in closed form and needs a single regime or
    disjoint regimes; otherwise ``n_perms`` random permutations are tried on
    ``n_draws`` Monte-Carlo draws.
    """
    n = stream.n if n is None else n
    if n != stream.n:
        raise ConfigError(f"stream produces {stream.n} scores, asked for {n}")
    if n < 2:
        raise ConfigError("need at least two positions")
    n_calib = n // 2 if n_calib is None else n_calib
    if not 1 <= n_calib < n:
        raise ConfigError("n_calib must lie in 1..n-1")

    if exact:
        if stream.single_regime:
            cp, upper = n, 1
        elif stream.disjoint:
            cp, upper = stream.changepoint, (1 if stream.shift > 0 else 0)
        else:
            raise ConfigError("exact mode needs a single regime or disjoint regime supports")
        m0_id = min(n_calib, cp)
        pmf_id = composition_pmf(n, cp, upper, n_calib, m0_id)
        a_star = max(range(n_calib + 1), key=lambda a: (pmf_id[a], -a))
        best = Fraction(0)
        for m0 in range(max(0, n_calib - (n - cp)), min(n_calib, cp) + 1):
            pmf = composition_pmf(n, cp, upper, n_calib, m0)
            best = max(best, abs(pmf_id[a_star] - pmf[a_star]))
        return DemoResult(float(best), 0.0, best)

    if n_draws < 100:
        raise ConfigError("n_draws must be >= 100")
    rng = np.random.default_rng(seed)
    draws = stream(rng, n_draws)
    ranks = np.argsort(np.argsort(draws, axis=1, kind="stable"), axis=1, kind="stable")
    high = ranks >= n - n // 2
    a_id = high[:, :n_calib].sum(axis=1)
    pmf_id = np.bincount(a_id, minlength=n_calib + 1) / n_draws
    a_star = int(np.argmax(pmf_id))
    p_id = pmf_id[a_star]
    best, best_se = 0.0, 0.0
    for _ in range(n_perms):
        perm = rng.permutation(n)
        p_perm = float(np.mean(high[:, perm[:n_calib]].sum(axis=1) == a_star))
        d = abs(p_id - p_perm)
        se = math.sqrt((p_id * (1 - p_id) + p_perm * (1 - p_perm)) / n_draws)
        if d > best:
            best, best_se = d, se
    if best == 0.0:
        best_se = math.sqrt(2 * p_id * (1 - p_id) / n_draws)
    return DemoResult(best, best_se)
