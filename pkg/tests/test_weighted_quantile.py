import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from tempo_conformal.errors import ConfigError, NumericError
from tempo_conformal.weighted_quantile import (
    INF,
    WeightVector,
    build_prediction_set,
    decay_weights,
    exchange_violations,
    fixed_weight_quantile,
    hard_quantile,
    nex_quantile,
    nex_quantile_batch,
    quantile_exchange_check,
    soft_quantile,
)

TENTHS = [round(0.1 * k, 1) for k in range(1, 11)]


# -- hard quantile ---------------------------------------------------------


def test_hard_rank_arithmetic():
    assert hard_quantile(TENTHS, 0.1) == 1.0
    assert hard_quantile(TENTHS[::-1], 0.1) == 1.0


def test_hard_insufficient_calibration_is_infinite():
    assert hard_quantile([0.3], 0.05) == INF


def test_hard_constant_scores():
    for alpha in (0.1, 0.3, 0.5, 0.9):
        assert hard_quantile([0.42] * 20, alpha) == 0.42


def test_hard_errors():
    with pytest.raises(ConfigError):
        hard_quantile([], 0.1)
    with pytest.raises(ConfigError):
        hard_quantile([0.1], 1.0)
    with pytest.raises(NumericError):
        hard_quantile([0.1, math.nan], 0.1)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.01, 0.99))
def test_hard_matches_rank_oracle(scores, alpha):
    k = math.ceil((len(scores) + 1) * (1 - alpha) - 1e-10)
    want = INF if k > len(scores) else sorted(scores)[k - 1]
    assert hard_quantile(scores, alpha) == want


def test_coverage_on_exchangeable_scores():
    """Marginal coverage of the rank quantile, 20 seeds of 1000 + 1000 uniform scores."""
    alpha, n = 0.1, 1000
    covs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        q = hard_quantile(rng.random(n), alpha)
        covs.append(np.mean(rng.random(n) <= q))
    se = math.sqrt(alpha * (1 - alpha) / (20 * n))
    assert np.mean(covs) >= 1 - alpha - 3 * se


# -- weighted quantile -----------------------------------------------------


def nex_oracle(scores, weights, alpha, test_weight):
    total = sum(weights) + test_weight
    for s in sorted(set(scores)):
        mass = sum(w for x, w in zip(scores, weights) if x <= s) / total
        if mass >= 1 - alpha - 1e-12:
            return s
    return INF


weighted = st.integers(1, 12).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0, 1), min_size=n, max_size=n),
        st.lists(st.floats(0, 2), min_size=n, max_size=n),
    )
)


@given(weighted, st.floats(0.01, 0.99), st.floats(0, 2))
def test_nex_matches_oracle(sw, alpha, tw):
    scores, weights = sw
    assume(sum(weights) + tw > 0)
    assert nex_quantile(scores, weights, alpha, tw) == nex_oracle(scores, weights, alpha, tw)


@given(st.integers(0, 2**31), st.floats(0.01, 0.99))
def test_nex_batch_matches_rowwise(seed, alpha):
    rng = np.random.default_rng(seed)
    S = rng.random((30, 7))
    w = rng.random(7)
    got = nex_quantile_batch(S, w, alpha, 0.7)
    assert got.tolist() == [nex_quantile(row, w, alpha, 0.7) for row in S]


def test_uniform_weights_reduce_to_hard():
    rng = np.random.default_rng(0)
    s = rng.random(37)
    for alpha in (0.05, 0.1, 0.2, 0.5):
        assert nex_quantile(s, np.ones(37), alpha) == hard_quantile(s, alpha)


def test_fixed_weight_examples():
    assert fixed_weight_quantile(TENTHS, 1.0, 0.1) == hard_quantile(TENTHS, 0.1) == 1.0
    # recent score carries mass 1/2.5, old 0.5/2.5: 0.6 in total falls short of 0.9
    assert fixed_weight_quantile([0.2, 0.9], 0.5, 0.1) == INF
    assert fixed_weight_quantile([0.2, 0.9], 0.5, 0.5) == 0.9
    assert fixed_weight_quantile([0.2, 0.9], 0.5, 0.85) == 0.2


def test_fixed_weight_small_alpha():
    s = [0.1, 0.5, 0.3]
    assert fixed_weight_quantile(s, 0.9, 1e-9) in (max(s), INF)


def test_decay_weights():
    np.testing.assert_allclose(decay_weights(3, 0.5), [0.25, 0.5, 1.0])
    with pytest.raises(ConfigError):
        decay_weights(3, 0.0)


# -- soft quantile ---------------------------------------------------------


def test_soft_limit_picks_closest_cumulative_rank():
    w = WeightVector.uniform(3)
    assert soft_quantile([3.0, 1.0, 2.0], w, 0.4, 1e-6).eta == pytest.approx(2.0, abs=1e-9)


def test_soft_exact_tie_averages_the_tied_ranks():
    # cumulative weights 1/3 and 2/3 are equally far from 0.5
    w = WeightVector.uniform(3)
    assert soft_quantile([1.0, 2.0, 3.0], w, 0.5, 1e-6).eta == pytest.approx(1.5, abs=1e-9)


def test_soft_point_mass_endpoint():
    w = WeightVector([0.0, 0.0, -60.0])  # cumulative ~[0.5, 1, 1]
    q = soft_quantile([5.0, 9.0, 7.0], w, 0.5, 1e-4)
    assert q.beta[0] == pytest.approx(1.0)
    assert q.eta == pytest.approx(5.0)


@given(st.floats(0, 10), st.integers(1, 20), st.floats(0.01, 0.99), st.floats(1e-3, 10))
def test_soft_constant_scores(c, n, alpha, T):
    w = WeightVector(np.random.default_rng(n).normal(size=n))
    assert soft_quantile([c] * n, w, alpha, T).eta == c


@given(st.integers(0, 2**31), st.integers(2, 40), st.floats(0.02, 0.98))
def test_soft_zero_temperature_limit(seed, n, alpha):
    rng = np.random.default_rng(seed)
    s = rng.random(n)
    w = WeightVector(rng.normal(size=n))
    gamma = np.abs(np.cumsum(w.weights) - (1 - alpha))
    two = np.sort(gamma)[:2]
    assume(two[1] - two[0] > 1e-3)
    want = np.sort(s)[np.argmin(gamma)]
    assert abs(soft_quantile(s, w, alpha, 1e-6).eta - want) <= 1e-6


@given(st.integers(0, 2**31), st.integers(1, 30))
def test_soft_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    s = rng.random(n)
    w = WeightVector(rng.normal(size=n))
    a = soft_quantile(s, w, 0.1, 0.05).eta
    b = soft_quantile(rng.permutation(s), w, 0.1, 0.05).eta
    assert a == b


def central_difference(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("selection", ["gamma", "weight"])
def test_soft_gradient_matches_finite_differences(selection):
    rng = np.random.default_rng(7)
    for _ in range(40):
        n = int(rng.integers(2, 65))
        s = rng.random(n)
        logits = rng.normal(size=n)
        alpha, T = rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)
        q = soft_quantile(s, WeightVector(logits), alpha, T, selection)
        fd = central_difference(
            lambda z: soft_quantile(s, WeightVector(z), alpha, T, selection).eta, logits
        )
        assert rel_err(q.grad_logits(), fd) < 1e-4


@given(st.integers(0, 2**31), st.integers(1, 30))
def test_thresholds_monotone_in_alpha(seed, n):
    rng = np.random.default_rng(seed)
    s = rng.random(n)
    w = WeightVector(rng.normal(size=n))
    a1, a2 = sorted(rng.uniform(0.01, 0.99, size=2))
    assert hard_quantile(s, a1) >= hard_quantile(s, a2)
    assert fixed_weight_quantile(s, 0.9, a1) >= fixed_weight_quantile(s, 0.9, a2)
    # Gamma-based selection with a sharp temperature follows the argmin rank
    assert soft_quantile(s, w, a1, 1e-9).eta >= soft_quantile(s, w, a2, 1e-9).eta - 1e-12
    cls = rng.random(4)
    big = build_prediction_set(cls, hard_quantile(s, a1))
    small = build_prediction_set(cls, hard_quantile(s, a2))
    assert small.admitted <= big.admitted


def test_soft_input_validation():
    w = WeightVector.uniform(2)
    with pytest.raises(ConfigError):
        soft_quantile([0.1, 0.2], w, 0.1, 0.0)
    with pytest.raises(ConfigError):
        soft_quantile([0.1, 0.2, 0.3], w, 0.1, 0.1)
    with pytest.raises(ConfigError):
        soft_quantile([0.1, 0.2], w, 0.1, 0.1, selection="median")


# -- prediction sets -------------------------------------------------------


def test_prediction_set_examples():
    assert build_prediction_set([0.3, 0.8], 0.5).admitted == {0}
    assert build_prediction_set([0.3, 0.8], INF).admitted == {0, 1}
    assert build_prediction_set([0.6, 0.7], 0.5).admitted == frozenset()
    assert build_prediction_set([0.5, 0.7], 0.5).admitted == {0}


# -- swap property ---------------------------------------------------------


def swap_oracle(s, w, alpha):
    """Every swap of the test score with a smaller calibration score, by brute force."""
    def q(values):
        if alpha is None:
            return sum(a * b for a, b in zip(w, values))
        order = sorted(range(len(values)), key=lambda i: values[i])
        total = 0.0
        for i in order:
            total += w[i]
            if total >= 1 - alpha - 1e-12:
                return values[i]
        return INF

    last = len(s) - 1
    out = []
    for k in range(last):
        if s[last] > s[k]:
            t = list(s)
            t[k], t[last] = t[last], t[k]
            if q(s) < q(t) - 1e-12:
                out.append(k)
    return out


instances = st.integers(2, 8).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0, 1), min_size=n, max_size=n),
        st.lists(st.floats(0.01, 1), min_size=n, max_size=n),
    )
)


@given(instances, st.one_of(st.none(), st.floats(0.05, 0.95)))
def test_exchange_check_matches_brute_force(sw, alpha):
    s, raw = sw
    w = (np.array(raw) / sum(raw)).tolist()
    got = [k for k, _, _ in exchange_violations(s, w, alpha)]
    assert got == swap_oracle(s, w, alpha)


@given(instances, st.one_of(st.none(), st.floats(0.05, 0.95)))
def test_test_position_with_max_weight_never_violates(sw, alpha):
    s, raw = sw
    raw = list(raw)
    i = int(np.argmax(raw))
    raw[i], raw[-1] = raw[-1], raw[i]
    w = np.array(raw) / sum(raw)
    assert quantile_exchange_check(s, w, alpha)


def test_equal_weights_never_violate():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        assert quantile_exchange_check(rng.random(n), np.full(n, 1 / n), 0.2)


def test_counterexample_reported():
    s = [0.1, 0.9]
    w = [0.7, 0.3]
    (k, before, after), = exchange_violations(s, w)
    assert k == 0
    assert before == pytest.approx(0.34)
    assert after == pytest.approx(0.66)


def test_exchange_weight_validation():
    with pytest.raises(ConfigError):
        exchange_violations([0.1, 0.2], [0.5, 0.6])
