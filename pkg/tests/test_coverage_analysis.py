import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tempo_conformal.coverage_analysis import (
    RegimeStream,
    composition_pmf,
    estimate_gap_bound,
    evaluate,
    gap_bound,
    gap_grid,
    nonexchangeability_demo,
    replicate_seed,
    summarize_grid,
    swap_tv,
    tv_distance_discrete,
)
from tempo_conformal.errors import ConfigError, ValidationError
from tempo_conformal.temporal_graph import TemporalNodeId as V
from tempo_conformal.weighted_quantile import PredictionSet


# -- metrics ---------------------------------------------------------------


def ps(i, admitted):
    return PredictionSet(V(i, 0), frozenset(admitted), 0.5)


def test_coverage_two_of_three():
    sets = [ps(0, {0}), ps(1, {1}), ps(2, {0})]
    r = evaluate(sets, {V(0, 0): 0, V(1, 0): 1, V(2, 0): 1})
    assert r.coverage == 2 / 3
    assert r.n_test == 3


def test_efficiency_mean_size():
    sets = [ps(0, {0}), ps(1, {0, 1}), ps(2, {0, 1, 2})]
    assert evaluate(sets, {V(i, 0): 0 for i in range(3)}).efficiency == 2.0


def test_full_sets():
    sets = [ps(i, {0, 1, 2, 3}) for i in range(5)]
    r = evaluate(sets, {V(i, 0): i % 4 for i in range(5)})
    assert (r.coverage, r.efficiency) == (1.0, 4.0)


def test_evaluate_errors():
    with pytest.raises(ConfigError):
        evaluate([], {})
    with pytest.raises(ValidationError):
        evaluate([ps(0, {0})], {})


def test_tv_examples():
    assert tv_distance_discrete([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert tv_distance_discrete([1, 0], [0, 1]) == 1.0
    assert tv_distance_discrete([0.5, 0.5], [0.8, 0.2]) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValidationError):
        tv_distance_discrete([0.5, 0.5], [1.0])
    with pytest.raises(ValidationError):
        tv_distance_discrete([0.5, 0.6], [0.5, 0.5])


histograms = st.integers(1, 8).flatmap(
    lambda k: st.tuples(
        *[st.lists(st.floats(0.001, 1), min_size=k, max_size=k) for _ in range(3)]
    )
)


@given(histograms)
def test_tv_is_a_metric(hs):
    p, q, r = (np.array(h) / sum(h) for h in hs)
    d = tv_distance_discrete
    assert d(p, q) == pytest.approx(d(q, p), abs=1e-15)
    assert d(p, p) == 0.0
    assert 0.0 <= d(p, q) <= 1.0 + 1e-12
    assert d(p, r) <= d(p, q) + d(q, r) + 1e-12


# -- swap TV estimate ------------------------------------------------------


def pair_tv_oracle(a, b, n_bins):
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    edges = np.linspace(lo, hi, n_bins + 1)
    h, _, _ = np.histogram2d(a, b, bins=[edges, edges])
    hs, _, _ = np.histogram2d(b, a, bins=[edges, edges])
    return 0.5 * np.abs(h - hs).sum() / a.size


@given(st.integers(0, 2**31), st.integers(1, 10), st.floats(-1, 1))
def test_pair_tv_matches_histogram2d(seed, n_bins, shift):
    rng = np.random.default_rng(seed)
    a = rng.random(500)
    b = rng.random(500) + shift
    assert swap_tv(a, b, n_bins) == pytest.approx(pair_tv_oracle(a, b, n_bins), abs=1e-12)


@given(st.integers(0, 2**31), st.integers(1, 10), st.floats(-1, 1))
def test_marginal_tv_never_exceeds_pair_tv(seed, n_bins, shift):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=300)
    b = rng.normal(size=300) + shift
    assert swap_tv(a, b, n_bins, "marginal") <= swap_tv(a, b, n_bins, "pair") + 1e-12


# -- bound -----------------------------------------------------------------


def test_gap_bound_arithmetic():
    assert gap_bound([0.5, 0.5], [1, 1]) == pytest.approx(1 / 3)
    assert gap_bound([0.5, 0.5], [1, 1, 2]) == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        gap_bound([0.5], [1, 1, 1])


@given(st.floats(1e-3, 1e3))
def test_bound_invariant_to_joint_weight_scaling(c):
    w = np.array([0.2, 0.5, 1.0, 0.7, 1.0])
    streams = (RegimeStream(4), RegimeStream(1, 0.3))
    a = estimate_gap_bound(*streams, w, 0.2, 2000, 6, seed=1)
    b = estimate_gap_bound(*streams, c * w, 0.2, 2000, 6, seed=1)
    assert abs(a.bound - b.bound) <= 1e-9
    assert a.empirical_gap == b.empirical_gap


def test_exchangeable_streams():
    r = estimate_gap_bound(RegimeStream(19), RegimeStream(1), np.ones(19), 0.1, 100_000, 8, seed=3)
    assert np.all(r.tv_terms < 0.03)
    assert r.bound < 0.02
    assert r.empirical_gap <= 3 * r.se


def test_shifted_regime_gap_within_bound():
    for seed in range(20):
        r = estimate_gap_bound(
            RegimeStream(19), RegimeStream(1, 0.5), np.ones(19), 0.1, 5000, 8, seed=seed
        )
        assert r.empirical_gap <= r.bound + 3 * r.se


def test_decaying_weights_shrink_bound():
    streams = (RegimeStream(19), RegimeStream(1, 0.5))
    flat = estimate_gap_bound(*streams, np.ones(19), 0.1, 5000, 8, seed=0)
    decayed = estimate_gap_bound(*streams, 0.8 ** np.arange(18, -1, -1), 0.1, 5000, 8, seed=0)
    assert decayed.bound < flat.bound


def test_gap_bound_input_checks():
    with pytest.raises(ConfigError):
        estimate_gap_bound(RegimeStream(3), RegimeStream(1), np.ones(3), 0.1, 99)
    with pytest.raises(ConfigError):
        estimate_gap_bound(RegimeStream(3), RegimeStream(1), np.ones(2), 0.1, 500)
    with pytest.raises(ConfigError):
        estimate_gap_bound(RegimeStream(3), RegimeStream(1), -np.ones(3), 0.1, 500)


def test_grid_is_independent_of_worker_count():
    kw = dict(shifts=(0.0, 0.5), n_seeds=3, n_calib=9, n_samples=500, seed=9)
    assert gap_grid(max_workers=1, **kw) == gap_grid(max_workers=3, **kw)


def test_replicate_seeds_distinct_and_stable():
    seeds = [replicate_seed(0, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert replicate_seed(0, 5) == seeds[5]


def test_summary_pools_replicates():
    cells = gap_grid(shifts=(0.0, 1.0), n_seeds=4, n_calib=9, n_samples=500, seed=2)
    summary = summarize_grid(cells)
    assert [s.shift for s in summary] == [0.0, 1.0]
    group = [c for c in cells if c.shift == 1.0]
    assert summary[1].mean_gap == pytest.approx(np.mean([c.empirical_gap for c in group]))
    assert summary[1].se == pytest.approx(math.sqrt(sum(c.se**2 for c in group)) / 4)


def test_regime_stream_validation():
    with pytest.raises(ConfigError):
        RegimeStream(0)
    with pytest.raises(ConfigError):
        RegimeStream(4, 1.0, changepoint=5)
    with pytest.raises(ConfigError):
        RegimeStream(4, family="cauchy")


# -- permutation-probability demo -----------------------------------------


def brute_force_disparity(n, changepoint, n_calib):
    """Enumerate within-regime rank orders of two disjoint regimes; the later regime is higher."""
    low = list(range(changepoint))
    high = list(range(changepoint, n))
    top = n - n // 2
    rows = Counter()
    for lo_perm in itertools.permutations(low):
        for hi_perm in itertools.permutations(high):
            ranks = lo_perm + hi_perm
            rows[tuple(r >= top for r in ranks)] += 1
    total = sum(rows.values())

    def pmf(subset):
        out = Counter()
        for row, m in rows.items():
            out[sum(row[i] for i in subset)] += m
        return {a: Fraction(c, total) for a, c in out.items()}

    ident = pmf(range(n_calib))
    a_star = max(ident, key=lambda a: (ident[a], -a))
    return max(
        abs(ident[a_star] - pmf(s).get(a_star, Fraction(0)))
        for s in itertools.combinations(range(n), n_calib)
    )


def test_demo_exact_matches_enumeration_small():
    for cp in (2, 3, 4):
        got = nonexchangeability_demo(RegimeStream(6, 2.0, changepoint=cp), exact=True)
        assert got.exact == brute_force_disparity(6, cp, 3)
        assert got.disparity > 0


def test_demo_exact_matches_enumeration_n8_uneven():
    got = nonexchangeability_demo(RegimeStream(8, 1.5, changepoint=3), n_calib=3, exact=True)
    assert got.exact == brute_force_disparity(8, 3, 3)


def test_demo_exact_single_regime_is_zero():
    assert nonexchangeability_demo(RegimeStream(12), exact=True).exact == 0


def test_demo_exact_needs_disjoint_regimes():
    with pytest.raises(ConfigError):
        nonexchangeability_demo(RegimeStream(12, 0.5, changepoint=6), exact=True)


def test_demo_monte_carlo_single_regime():
    r = nonexchangeability_demo(RegimeStream(12), seed=4, n_draws=20_000)
    assert r.disparity < 3 * r.se


def test_demo_monte_carlo_two_regimes_positive():
    r = nonexchangeability_demo(RegimeStream(12, 2.0, changepoint=6), seed=4, n_draws=5000)
    assert 3 * r.se < r.disparity <= 1


def test_composition_pmf_matches_monte_carlo():
    n, cp, n_calib = 12, 4, 6
    stream = RegimeStream(n, 1.0, changepoint=cp)
    rng = np.random.default_rng(0)
    draws = stream(rng, 40_000)
    ranks = np.argsort(np.argsort(draws, axis=1), axis=1)
    high = ranks >= n - n // 2
    for subset in ([0, 1, 2, 3, 4, 5], [0, 5, 6, 7, 8, 9], [2, 4, 6, 8, 10, 11]):
        m0 = sum(i < cp for i in subset)
        exact = composition_pmf(n, cp, 1, n_calib, m0)
        freq = np.bincount(high[:, subset].sum(axis=1), minlength=n_calib + 1) / draws.shape[0]
        for a in range(n_calib + 1):
            p = float(exact[a])
            se = math.sqrt(max(p * (1 - p), 1e-12) / draws.shape[0])
            assert abs(freq[a] - p) <= 3 * se + 1e-12
