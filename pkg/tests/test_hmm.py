import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_loglik, random_stochastic
from lulcc.factors import ObservationSequence
from lulcc.hmm import (PROB_FLOOR, VAR_FLOOR, GaussianHmmParams, HmmError, baum_welch_train,
                       forward_backward, init_params, learned_quantum, log_emission_density,
                       log_emissions, match_states)
from lulcc.markov import TransitionMatrix
from lulcc.synth import sample_hmm_sequence

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
TABLE_ROW_2002 = [[0.7920, 0.1067, 0.1013], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]


def make_params(pi, A, means, vars_):
    n = len(pi)
    classes = tuple(range(1, n + 1))
    return GaussianHmmParams(classes, np.asarray(pi, float), TransitionMatrix(classes, A),
                             np.asarray(means, float), np.asarray(vars_, float))


def random_params(rng, n, d):
    return make_params(rng.dirichlet(np.ones(n)), random_stochastic(rng, n), rng.normal(size=(n, d)),
                       rng.uniform(0.2, 2.0, size=(n, d)))


def test_log_density_examples():
    p = make_params([1.0], [[1.0]], [[0.0]], [[1.0]])
    assert log_emission_density(p, 0, [0.0]) == pytest.approx(-0.9189385, abs=1e-7)
    q = make_params([1.0], [[1.0]], [[2.0, -1.0]], [[0.3, 4.0]])
    at_mean = log_emission_density(q, 0, [2.0, -1.0])
    assert at_mean == pytest.approx(-0.5 * math.log(2 * math.pi * 0.3) - 0.5 * math.log(2 * math.pi * 4.0))
    assert log_emission_density(q, 0, [2.0, 1.0]) == pytest.approx(at_mean - 0.5, abs=1e-12)


def test_forward_backward_shared_emission_case():
    p = make_params([1.0, 0.0], [[0.5, 0.5], [0.5, 0.5]], [[0.0], [0.0]], [[1.0], [1.0]])
    ll, gamma, xi = forward_backward(p, np.array([[0.0]]))
    assert ll == pytest.approx(-HALF_LOG_2PI, abs=1e-12)
    np.testing.assert_allclose(gamma[0], [1, 0])
    assert xi.shape == (0, 2, 2)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_forward_backward_matches_path_enumeration(n, T, d, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n, d)
    X = rng.normal(size=(T, d))
    ll, gamma, xi = forward_backward(p, X)
    oracle = brute_force_loglik(p.pi, p.trans.probs, log_emissions(p, X))
    assert abs(ll - oracle) <= 1e-10 * abs(oracle) + 1e-300
    np.testing.assert_allclose(gamma.sum(axis=1), 1, atol=1e-9)
    if T > 1:
        np.testing.assert_allclose(xi.sum(axis=(1, 2)), 1, atol=1e-9)
        np.testing.assert_allclose(xi.sum(axis=2), gamma[:-1], atol=1e-9)


def test_forward_backward_long_sequence_no_underflow():
    rng = np.random.default_rng(3)
    p = random_params(rng, 3, 2)
    X = rng.normal(size=(100_000, 2))
    ll, gamma, _ = forward_backward(p, X)
    assert np.isfinite(ll)
    np.testing.assert_allclose(gamma.sum(axis=1), 1, atol=1e-9)


def test_forward_backward_rejects_nan():
    p = make_params([1.0], [[1.0]], [[0.0]], [[1.0]])
    with pytest.raises(HmmError):
        forward_backward(p, np.array([[np.nan]]))


def _obs(rng, T=60):
    return ObservationSequence(np.repeat(rng.random((T // 6, 2)), 6, axis=0), 6)


def test_init_params_copies_table_matrix():
    rng = np.random.default_rng(0)
    mc = TransitionMatrix((1, 2, 3), TABLE_ROW_2002)
    p = init_params(mc, [0.5, 0.25, 0.25], _obs(rng), seed=0)
    # the zero entries are floored, the rest shrink by the renormalizer
    expected = np.maximum(np.array(TABLE_ROW_2002), PROB_FLOOR)
    expected /= expected.sum(axis=1, keepdims=True)
    np.testing.assert_array_equal(p.trans.probs, expected)
    np.testing.assert_allclose(p.trans.probs[0], TABLE_ROW_2002[0], atol=1e-15)
    np.testing.assert_array_equal(p.pi, [0.5, 0.25, 0.25])
    assert learned_quantum(p) == p.trans


def test_init_params_floors_zero_prior():
    rng = np.random.default_rng(0)
    mc = TransitionMatrix((1, 2, 3), np.eye(3))
    p = init_params(mc, [1.0, 0.0, 0.0], _obs(rng), seed=1)
    z = 1 + 2 * PROB_FLOOR
    np.testing.assert_allclose(p.pi, [1 / z, PROB_FLOOR / z, PROB_FLOOR / z], rtol=1e-12)


def test_init_params_deterministic_and_ordered():
    rng = np.random.default_rng(5)
    obs = _obs(rng, 84)
    mc = TransitionMatrix((1, 2, 3), random_stochastic(rng, 3))
    a = init_params(mc, [0.2, 0.3, 0.5], obs, seed=7)
    assert a == init_params(mc, [0.2, 0.3, 0.5], obs, seed=7)
    assert np.all(a.vars >= VAR_FLOOR)
    # state k carries the k-th largest cluster
    d = ((obs.observations[:, None, :] - a.means[None]) ** 2).sum(axis=2)
    sizes = np.bincount(d.argmin(axis=1), minlength=3)
    assert list(sizes) == sorted(sizes, reverse=True)


def test_init_params_errors():
    mc = TransitionMatrix((1, 2), np.eye(2))
    with pytest.raises(HmmError):
        init_params(mc, [1.0], _obs(np.random.default_rng(0)))
    with pytest.raises(HmmError):
        init_params(mc, [0.5, 0.5], ObservationSequence(np.zeros((0, 2))))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 3), st.integers(0, 2**32 - 1))
def test_em_monotone_and_valid(n, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n, 2)
    X = rng.normal(size=(40, 2))
    trained, trace = baum_welch_train(p, X, max_iter=60, tol=1e-9)
    ll = np.array(trace.log_likelihoods)
    assert np.all(np.diff(ll) >= -1e-8)
    assert np.all(trained.vars >= VAR_FLOOR)
    assert np.all(np.abs(trained.trans.probs.sum(axis=1) - 1) <= 1e-9)
    assert abs(trained.pi.sum() - 1) <= 1e-9


def test_em_zero_budget_and_determinism():
    rng = np.random.default_rng(9)
    p = random_params(rng, 3, 2)
    X = rng.normal(size=(30, 2))
    same, trace = baum_welch_train(p, X, max_iter=0)
    assert same == p and not trace.converged and trace.log_likelihoods == []
    a, ta = baum_welch_train(p, X, max_iter=40, tol=1e-6)
    b, tb = baum_welch_train(p, X, max_iter=40, tol=1e-6)
    assert a == b and ta.log_likelihoods == tb.log_likelihoods


def test_em_near_stationary_point():
    true = make_params([1 / 3] * 3, [[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]],
                       [[0, 0], [3, 3], [6, 0]], np.full((3, 2), 0.25))
    _, X = sample_hmm_sequence(true, 20_000, seed=4)
    once, _ = baum_welch_train(true, X, max_iter=1000, tol=0.01)
    _, trace = baum_welch_train(once, X, max_iter=1000, tol=0.01)
    assert trace.iterations_run <= 5 and trace.converged
    assert np.max(np.abs(once.trans.probs - true.trans.probs)) < 0.02


def test_em_rejects_short_sequence():
    p = make_params([1.0], [[1.0]], [[0.0]], [[1.0]])
    with pytest.raises(HmmError):
        baum_welch_train(p, np.zeros((1, 1)))


def test_match_states():
    ref = np.array([[0.0, 0], [1, 1], [2, 0]])
    assert match_states(ref[[2, 0, 1]], ref) == (1, 2, 0)


def test_params_json_roundtrip(tmp_path):
    p = random_params(np.random.default_rng(1), 3, 4)
    p.save(tmp_path / "p.json")
    assert GaussianHmmParams.load(tmp_path / "p.json") == p


def test_params_invariants():
    with pytest.raises(HmmError):
        make_params([0.5, 0.4], np.eye(2), np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(HmmError):
        make_params([1.0], [[1.0]], [[0.0]], [[1e-9]])
