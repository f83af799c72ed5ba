import numpy as np
import pytest

from cascade_sdr.cascade import (
    SOURCE,
    FeatureModel,
    FrontierPolicy,
    InformationTrace,
    TraceEvent,
    TraceSampler,
    export_csv,
    read_traces,
    sample_trace,
    sample_traces,
    write_traces,
)
from cascade_sdr.kernels import HypothesisModel, stationary_distribution
from cascade_sdr._validation import TraceFormatError

from conftest import A


def test_deterministic_chain():
    m = HypothesisModel([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    t = sample_trace(m, 0, 5, FrontierPolicy.single_path(), seed=1)
    assert t.types.tolist() == [0] * 5
    assert t.parents.tolist() == [SOURCE, 0, 1, 2, 3]


@pytest.mark.parametrize("policy", ["uniform", "single", "spawn:0.3"])
def test_horizon_one_is_a_single_source_event(policy):
    m = HypothesisModel([0.3, 0.7], A)
    counts = np.zeros(2)
    for seed in range(2000):
        t = sample_trace(m, 0, 1, policy, seed)
        assert t.parents.tolist() == [SOURCE]
        counts[t.types[0]] += 1
    assert counts / counts.sum() == pytest.approx([0.3, 0.7], abs=0.04)


def test_long_single_path_matches_stationary_law():
    m = HypothesisModel([0.5, 0.5], A)
    t = sample_trace(m, 0, 10_000, "single", seed=11)
    freq = np.bincount(t.types, minlength=2) / len(t)
    assert freq == pytest.approx(stationary_distribution(np.array(A)), abs=0.02)
    assert freq == pytest.approx([5 / 6, 1 / 6], abs=0.02)


def test_horizon_zero_rejected():
    with pytest.raises(ValueError, match="horizon must be ≥ 1"):
        sample_trace(HypothesisModel([0.5, 0.5], A), 0, 0)


@pytest.mark.parametrize("policy", ["uniform", "spawn:0.2", "single"])
def test_sampler_prefix_is_chunk_independent(policy):
    m = HypothesisModel([0.5, 0.5], A)
    fm = FeatureModel.separated(2, 3)
    full = sample_trace(m, 0, 300, policy, seed=4, features=fm, trace_id="x")
    s = TraceSampler(m, 0, policy, seed=4, features=fm, chunk=7)
    for n in (1, 13, 64, 300):
        part = s.take(n, trace_id="x")
        assert part == full.prefix(n)


def test_tree_invariants_under_uniform_frontier():
    m = HypothesisModel([0.5, 0.5], A)
    t = sample_trace(m, 0, 500, "uniform", seed=2)
    assert np.all((t.parents < np.arange(len(t))) | (t.parents == SOURCE))
    # each event has at most one child: chains never branch
    kids = np.bincount(t.parents[t.parents != SOURCE], minlength=len(t))
    assert kids.max() <= 1
    chains = t.paths()
    assert sorted(i for c in chains for i in c) == list(range(len(t)))
    assert len(chains) == int(np.sum(t.parents == SOURCE))


def test_spawn_policy_rate():
    m = HypothesisModel([0.5, 0.5], A)
    t = sample_trace(m, 0, 20_000, "spawn:0.1", seed=3)
    assert np.mean(t.parents == SOURCE) == pytest.approx(0.1, abs=0.01)


def test_policy_parse():
    assert FrontierPolicy.parse("uniform") == FrontierPolicy.uniform()
    assert FrontierPolicy.parse("spawn:0.25").p == 0.25
    assert str(FrontierPolicy.spawn(0.25)) == "spawn:0.25"
    with pytest.raises(ValueError):
        FrontierPolicy.parse("bogus")


def test_trace_validation():
    with pytest.raises(ValueError):
        InformationTrace([SOURCE, 1], [0, 0])
    with pytest.raises(ValueError):
        InformationTrace([SOURCE, 0])
    with pytest.raises(ValueError):
        InformationTrace.from_events([TraceEvent(0, SOURCE, 0), TraceEvent(1, 0, None, (1.0,), (1.0,))])


def test_ancestor_types_and_paths():
    t = InformationTrace([SOURCE, 0, SOURCE, 1, 2], [0, 1, 1, 0, 0])
    assert t.ancestor_types().tolist() == [-1, 0, -1, 1, 1]
    assert t.paths() == [[0, 1, 3], [2, 4]]


def test_round_trip(tmp_path):
    from cascade_sdr import bundled_models

    models = bundled_models("three_class")
    fm = FeatureModel.separated(3, 2)
    traces = sample_traces(models, 334, 8, "uniform", base_seed=5, features=fm)[:1000]
    p = tmp_path / "t.jsonl"
    write_traces(traces, p)
    back = read_traces(p)
    assert back == traces


def test_empty_and_byte_stable(tmp_path):
    p = tmp_path / "e.jsonl"
    write_traces([], p)
    assert read_traces(p) == []
    assert len(p.read_text().splitlines()) == 1
    t = InformationTrace([SOURCE, 0, 1], [0, 1, 1], label=1, trace_id="a")
    p1, p2 = tmp_path / "1.jsonl", tmp_path / "2.jsonl"
    write_traces([t], p1)
    write_traces([t], p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert read_traces(p1)[0].events[2] == TraceEvent(2, 1, 1)


def test_read_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"format": "cascade-traces", "version": 1}\n'
                 '{"trace_id": "a", "label": 0, "events": [{"parent": -1, "type": 0}]}\n'
                 '{"trace_id": "b", "label": 0, "events": [{"parent": -1, "type": 0}, {"parent": -1}]}\n')
    with pytest.raises(TraceFormatError, match="line 3"):
        read_traces(p)
    p.write_text('{"format": "cascade-traces", "version": 1}\n{oops\n')
    with pytest.raises(TraceFormatError, match="line 2"):
        read_traces(p)


def test_export_csv(tmp_path):
    t = InformationTrace([SOURCE, 0], [0, 1], xu=[[0.0], [1.0]], xv=[[1.0], [2.0]], trace_id="a")
    p = tmp_path / "t.csv"
    export_csv([t], p)
    lines = p.read_text().splitlines()
    assert lines[0] == "trace_id,label,index,parent,type,xu0,xv0"
    assert len(lines) == 3
