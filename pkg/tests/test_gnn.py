import math

import numpy as np
import pytest

from cascade_sdr import ModelSet, sample_trace, sample_traces
from cascade_sdr.cascade import SOURCE, FeatureModel, InformationTrace
from cascade_sdr.gnn import (
    AggregatorState,
    GinScorer,
    GinWeights,
    NodeScorer,
    OracleScorer,
    ScorerContractError,
    TabularScorer,
    aggregate_step,
    estimate_xi,
    gin_forward,
    run_gnn_sdr,
)
from cascade_sdr.msprt import SdrConfig, run_sdr

from conftest import A, B


def identity_weights(epsilon=0.0):
    eye = np.eye(2)
    return GinWeights(eye, np.zeros(2), epsilon, eye, np.zeros(2))


def test_gin_forward_values():
    w = identity_weights()
    assert gin_forward(np.zeros(2), None, w) == pytest.approx([0.5, 0.5], abs=1e-15)
    e = math.e
    assert gin_forward(np.array([1.0, 0.0]), None, w) == pytest.approx([e / (e + 1), 1 / (e + 1)], abs=1e-15)
    assert gin_forward(np.array([1.0, 0.0]), None, w) == pytest.approx([0.73106, 0.26894], abs=1e-5)
    w1 = identity_weights(1.0)
    x = np.array([1.0, 0.0])
    out = gin_forward(x, x, w1)
    assert out == pytest.approx([math.exp(3) / (math.exp(3) + 1), 1 / (math.exp(3) + 1)], abs=1e-15)
    assert out == pytest.approx([0.95257, 0.04743], abs=1e-5)


def test_gin_weights_io(tmp_path):
    rng = np.random.default_rng(1)
    w = GinWeights(rng.normal(size=(3, 4)), rng.normal(size=3), 0.5, rng.normal(size=(2, 3)), rng.normal(size=2))
    assert (w.d, w.h, w.n_classes) == (4, 3, 2)
    w.save(tmp_path / "w.json")
    w2 = GinWeights.load(tmp_path / "w.json")
    assert np.array_equal(w2.W1, w.W1) and w2.epsilon == 0.5
    with pytest.raises(ValueError):
        GinWeights(np.eye(2), np.zeros(3), 0.0, np.eye(2), np.zeros(2))


def test_aggregate_step():
    s = AggregatorState.initial(2)
    s, phi = aggregate_step(s, [0.6, 0.4])
    assert phi == pytest.approx([0.6, 0.4])
    s, phi = aggregate_step(s, [0.75, 0.25])
    assert phi == pytest.approx([0.45 / 0.55, 0.10 / 0.55], abs=1e-15)
    assert phi == pytest.approx([0.8182, 0.1818], abs=1e-4)
    with pytest.raises(ScorerContractError):
        aggregate_step(s, [1.0, 0.0])


def test_uniform_scores_keep_phi_uniform():
    s = AggregatorState.initial(3)
    for _ in range(5):
        s, phi = aggregate_step(s, np.full(3, 1 / 3))
        assert phi == pytest.approx(np.full(3, 1 / 3))


class UniformScorer(NodeScorer):
    requires = "types"

    def __init__(self, M):
        self.n_classes = M

    def score(self, trace):
        return np.full((len(trace), self.n_classes), 1.0 / self.n_classes)


def test_uniform_scorer_never_stops(three_class):
    t = sample_trace(three_class, 0, 50, "uniform", seed=1)
    out = run_gnn_sdr(t, UniformScorer(3), SdrConfig(0.5))
    assert not out.stopped and out.stop_time == 50


def test_oracle_scorer_equivalence(three_class):
    cfg = SdrConfig(0.05)
    for t in sample_traces(three_class, 30, 40, "uniform", base_seed=11):
        a = run_gnn_sdr(t, OracleScorer(three_class), cfg)
        b = run_sdr(t, three_class, cfg)
        assert np.max(np.abs(a.trajectory - b.trajectory)) < 1e-10
        assert (a.stop_time, a.decision) == (b.stop_time, b.decision)


def test_gin_scorer_decision_is_argmax_of_product():
    fm = FeatureModel(np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]), sigma=0.3)
    m = ModelSet.from_arrays([[0.5, 0.5]] * 2, [A, B])
    t = sample_trace(m, 0, 12, "uniform", seed=3, features=fm)
    scorer = GinScorer(identity_weights())
    out = run_gnn_sdr(t, scorer, SdrConfig(1e-9))
    phis = [gin_forward(t.xv[i], None if t.parents[i] == SOURCE else t.xu[i], scorer.weights)
            for i in range(len(t))]
    prod = np.prod(phis, axis=0)
    assert out.decision == int(np.argmax(prod))
    assert out.trajectory[-1] == pytest.approx(prod / prod.sum())


def test_tabular_scorer():
    traces = [InformationTrace([SOURCE, 0], [0, 0], label=0), InformationTrace([SOURCE, 0], [1, 1], label=1)]
    sc = TabularScorer.from_counts(traces, z_count=2, n_classes=2, smoothing=1.0)
    s = sc.score(traces[0])
    assert s.shape == (2, 2) and np.allclose(s.sum(axis=1), 1)
    assert s[1, 0] > s[1, 1]
    with pytest.raises(ScorerContractError):
        TabularScorer(np.zeros((3, 2, 2)))


def test_xi_oracle_is_one(three_class):
    est = estimate_xi(OracleScorer(three_class), three_class, 30, 60, seed=4)
    assert est.xi_hat == pytest.approx(1.0, abs=1e-10)


def test_xi_grows_with_folded_prior():
    m = ModelSet.from_arrays([[0.5, 0.5]] * 2, [A, B], priors=[0.9, 0.1])
    sc = OracleScorer(m, fold_prior=True)
    short = estimate_xi(sc, m, 5, 40, seed=1).xi_hat
    long = estimate_xi(sc, m, 20, 40, seed=1).xi_hat
    assert short > 1.0 and long > short
    # each node carries the prior ratio 9 once
    assert math.log(long) == pytest.approx(20 * math.log(9), rel=1e-9)


def test_xi_needs_two_hypotheses():
    m = ModelSet.from_arrays([[0.5, 0.5]], [A])
    with pytest.raises(ValueError, match="xi undefined for M<2"):
        estimate_xi(OracleScorer(m), m, 5, 5, seed=0)
