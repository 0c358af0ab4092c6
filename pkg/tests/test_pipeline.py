import numpy as np
import pytest

from tempo_conformal.efficiency_optimizer import OptimizerConfig
from tempo_conformal.errors import ConfigError
from tempo_conformal.nonconformity import DiffusionParams, compute_scores, true_label_scores
from tempo_conformal.pipeline import calibrate, set_sizes
from tempo_conformal.synth import SynthConfig, chronological_split, generate_temporal_graph
from tempo_conformal.weighted_quantile import fixed_weight_quantile, hard_quantile


@pytest.fixture(scope="module")
def data():
    g, p = generate_temporal_graph(SynthConfig(n_nodes=120, n_timesteps=10, edges_per_step=240, seed=2))
    return g, p, chronological_split(g)


def calib_scores(g, p, plan, kind="diffusion"):
    s = compute_scores(kind, p, g)
    ids = sorted(plan.calib_train + plan.calib_valid, key=lambda v: (v.time, v.node))
    return true_label_scores(s, g, ids)


def test_hard_threshold(data):
    g, p, plan = data
    res = calibrate(g, p, plan, alpha=0.1, quantile_kind="hard")
    assert res.threshold == hard_quantile(calib_scores(g, p, plan), 0.1)
    assert res.trace is None and res.weights is None
    assert res.report.n_test == len(plan.test)
    assert [s.node for s in res.sets] == list(plan.test)


def test_fixed_weight_threshold(data):
    g, p, plan = data
    res = calibrate(g, p, plan, alpha=0.1, quantile_kind="fixed-weight", decay=0.95)
    assert res.threshold == fixed_weight_quantile(calib_scores(g, p, plan), 0.95, 0.1)
    one = calibrate(g, p, plan, alpha=0.1, quantile_kind="fixed-weight", decay=1.0)
    hard = calibrate(g, p, plan, alpha=0.1, quantile_kind="hard")
    assert one.threshold == hard.threshold


def test_learned_threshold_is_frozen_soft_quantile(data):
    g, p, plan = data
    res = calibrate(g, p, plan, alpha=0.1, quantile_kind="learned", opt=OptimizerConfig(epochs=5))
    assert res.threshold == res.trace.threshold
    assert res.weights.n == len(plan.calib_train)
    assert len(res.trace) == 5
    assert all(s.quantile_used == res.threshold for s in res.sets)


def test_report_matches_sets(data):
    g, p, plan = data
    res = calibrate(g, p, plan, alpha=0.1, score_kind="aps", quantile_kind="hard")
    covered = np.mean([g.labels[s.node] in s.admitted for s in res.sets])
    assert res.report.coverage == covered
    assert res.report.efficiency == set_sizes(res.sets).mean()


def test_unknown_quantile_kind(data):
    g, p, plan = data
    with pytest.raises(ConfigError):
        calibrate(g, p, plan, quantile_kind="median")


@pytest.mark.parametrize("kind", ["hard", "learned"])
def test_coverage_on_exchangeable_graphs(kind):
    """20-seed mean coverage at alpha = 0.05 with diffusion scores at the default mixing."""
    covs = []
    for seed in range(20):
        g, p = generate_temporal_graph(SynthConfig(drift_rate=0.0, seed=seed))
        res = calibrate(
            g, p, chronological_split(g), alpha=0.05, score_kind="diffusion",
            dp=DiffusionParams(0.01, 0.01), quantile_kind=kind,
        )
        covs.append(res.report.coverage)
    assert np.mean(covs) >= 0.94
