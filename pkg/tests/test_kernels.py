import json
import math

import numpy as np
import pytest

from cascade_sdr.kernels import (
    HypothesisModel,
    ModelError,
    ModelSet,
    ReducibleChainError,
    SeparationError,
    bundled_models,
    chi_square,
    conditional_kl,
    divergence_report,
    hellinger_affinity,
    load_models,
    save_models,
    stationary_distribution,
    stationary_kl,
    tail_constants,
)

from conftest import A, B


@pytest.fixture
def ab():
    return ModelSet.from_arrays([[0.5, 0.5], [0.5, 0.5]], [A, B])


def test_model_validation():
    with pytest.raises(ModelError):
        HypothesisModel([0.5, 0.6], A)
    with pytest.raises(ModelError, match="row 1"):
        HypothesisModel([0.5, 0.5], [[0.9, 0.1], [0.5, 0.6]])
    with pytest.raises(ModelError):
        HypothesisModel([0.5, 0.5], [[1.1, -0.1], [0.5, 0.5]])


def test_hellinger_affinity_values(ab):
    assert hellinger_affinity(0, 0, 0, ab) == pytest.approx(1.0)
    assert hellinger_affinity(0, 1, 0, ab) == pytest.approx(math.sqrt(0.45) + math.sqrt(0.05), abs=1e-12)
    assert hellinger_affinity(0, 1, 0, ab) == pytest.approx(0.894427, abs=1e-6)
    disjoint = ModelSet.from_arrays([[0.5, 0.5]] * 2, [[[1, 0], [0, 1]], [[0, 1], [1, 0]]])
    assert hellinger_affinity(0, 1, 0, disjoint) == 0.0


def test_conditional_and_stationary_kl(ab):
    assert conditional_kl(0, 0, 0, ab) == 0.0
    assert conditional_kl(0, 1, 0, ab) == pytest.approx(0.9 * math.log(1.8) + 0.1 * math.log(0.2), abs=1e-12)
    assert conditional_kl(0, 1, 0, ab) == pytest.approx(0.368065, abs=1e-6)
    assert conditional_kl(0, 1, 1, ab) == pytest.approx(0.510826, abs=1e-6)
    # independent closed form: (5/6) KL_0 + (1/6) KL_1
    expected = 5 / 6 * (0.9 * math.log(1.8) + 0.1 * math.log(0.2)) + 1 / 6 * (0.5 * math.log(0.5 / 0.1) + 0.5 * math.log(0.5 / 0.9))
    assert stationary_kl(0, 1, ab) == pytest.approx(expected, abs=1e-12)
    # the quoted 0.391859 comes from rounded per-state terms; the exact value is 0.3918578
    assert stationary_kl(0, 1, ab) == pytest.approx(0.391859, abs=2e-6)


def test_kl_infinite_on_support_violation():
    m = ModelSet.from_arrays([[0.5, 0.5]] * 2, [[[0.5, 0.5], [0.5, 0.5]], [[1, 0], [0.5, 0.5]]])
    assert conditional_kl(0, 1, 0, m) == math.inf
    assert chi_square(0, 1, 0, m) == math.inf


def test_chi_square(ab):
    assert chi_square(0, 0, 0, ab) == pytest.approx(0.0, abs=1e-15)
    assert chi_square(0, 1, 0, ab) == pytest.approx(0.64, abs=1e-12)
    m = ModelSet.from_arrays([[0.5, 0.5]] * 2, [[[1, 0], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]]])
    assert chi_square(0, 1, 0, m) == pytest.approx(1.0, abs=1e-12)


def test_stationary_distribution():
    assert stationary_distribution(np.array([[0, 1], [1, 0]], float)) == pytest.approx([0.5, 0.5], abs=1e-12)
    assert stationary_distribution(np.array(A)) == pytest.approx([5 / 6, 1 / 6], abs=1e-12)
    assert stationary_distribution(np.full((4, 4), 0.25)) == pytest.approx(np.full(4, 0.25), abs=1e-12)


def test_stationary_distribution_power_iteration_path():
    rng = np.random.default_rng(5)
    P = rng.dirichlet(np.ones(80), size=80)
    pi = stationary_distribution(P)
    assert pi @ P == pytest.approx(pi, abs=1e-10)
    assert pi.sum() == pytest.approx(1.0)


def test_reducible_chain_names_unreachable_states():
    P = np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])
    with pytest.raises(ReducibleChainError) as exc:
        stationary_distribution(P)
    assert exc.value.unreachable == [1, 2]


def test_tail_constants():
    # three hypotheses sharing the 0.894427 affinity at every state and with each other
    m = ModelSet.from_arrays([[0.5, 0.5]] * 3, [A, B, [[0.1, 0.9], [0.5, 0.5]]])
    c1, c2 = tail_constants(1, m, np.full(3, 1 / 3), 0.1)
    assert c1 == pytest.approx(2**1.5 * math.sqrt(10), abs=1e-12)
    assert c1 == pytest.approx(8.944, abs=1e-3)
    assert c2 == pytest.approx(-math.log(math.sqrt(0.45) + math.sqrt(0.05)), abs=1e-12)
    assert c2 == pytest.approx(0.111572, abs=1e-6)


def test_tail_constants_worst_affinity_drives_c2():
    m = ModelSet.from_arrays([[0.5, 0.5]] * 3, [A, B, [[0.6, 0.4], [0.3, 0.7]]])
    _, c2 = tail_constants(0, m, None, 0.1)
    worst = max(hellinger_affinity(0, j, z, m) for j in (1, 2) for z in (0, 1))
    assert c2 == pytest.approx(-math.log(worst))


def test_tail_constants_include_initial():
    m = ModelSet.from_arrays([[0.99, 0.01], [0.01, 0.99]], [A, B])
    _, c2 = tail_constants(0, m, None, 0.1)
    _, c2_init = tail_constants(0, m, None, 0.1, include_initial=True)
    assert c2_init == pytest.approx(c2)  # the eta pair is far apart already
    m2 = ModelSet.from_arrays([[0.5, 0.5], [0.5, 0.5]], [A, B])
    with pytest.raises(SeparationError):
        tail_constants(0, m2, None, 0.1, include_initial=True)


def test_tail_constants_unseparated():
    m = ModelSet.from_arrays([[0.5, 0.5]] * 2, [A, A])
    with pytest.raises(SeparationError, match="not Hellinger-separated"):
        tail_constants(0, m, None, 0.1)


def test_divergence_report_shapes(three_class):
    rep = divergence_report(three_class)
    assert rep.S.shape == (3, 3, 3)
    assert np.allclose(rep.S[np.arange(3), np.arange(3)], 1.0)
    assert np.all(np.diag(rep.kl_stat) == 0)
    json.dumps(rep.to_dict())


def test_model_io_round_trip(tmp_path, three_class):
    p = tmp_path / "m.json"
    save_models(three_class, p)
    assert load_models(p) == three_class
    p.write_text("{not json")
    with pytest.raises(ModelError, match="invalid JSON"):
        load_models(p)


def test_bundled_models():
    ab = bundled_models("ab_pair")
    assert stationary_kl(0, 1, ab) == pytest.approx(0.3918578, abs=1e-7)
    with pytest.raises(ModelError):
        bundled_models("nope")


def test_permuted_and_priors(three_class):
    p = three_class.permuted([2, 0, 1])
    assert np.array_equal(p.alpha[0], three_class.alpha[2])
    q = three_class.with_priors([0.5, 0.25, 0.25])
    assert q.priors == pytest.approx([0.5, 0.25, 0.25])
