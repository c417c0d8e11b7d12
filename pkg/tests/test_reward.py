"""Tests for the Monte-Carlo Kac-Rice reward"""

import math
from unittest.mock import patch

import numpy as np
import pytest
from scipy.stats import spearmanr

from quadricrl.config import OracleOptions, RewardConfig
from quadricrl.errors import DomainError, EstimationFailedError, PivotDegeneracyError, SamplingAnomalyError
from quadricrl.normalization import normalize
from quadricrl.oracle import count_real_solutions
from quadricrl.power_flow import random_definite_system
from quadricrl.quadric import QuadricSystem, random_system
from quadricrl.reward import (
    POINT_STREAM,
    TUPLE_STREAM,
    annulus_bounds,
    condition_entry,
    estimate_reward,
    importance_weight,
    jacobian_dxG,
    reward_pipeline,
    sample_annulus,
    select_pivot,
    select_pivots,
)


def test_pivot_examples():
    """Test the median rule, its fallback and the tie-break"""
    assert select_pivot(np.array([3.0, 1.0, 0.1])) == 1
    assert select_pivot(np.array([0.1, 0.2, 0.3])) == 2
    assert select_pivot(np.array([1.0, 1.0, 1.0])) == 0


def test_pivot_batch_flags_fallbacks():
    points = np.array([[3.0, 1.0, 0.1], [0.1, 0.2, 0.3], [-2.0, 0.9, -1.5]])
    pivots, fallback = select_pivots(points)
    np.testing.assert_array_equal(pivots, [1, 2, 2])
    np.testing.assert_array_equal(fallback, [False, True, False])


def test_annulus_bounds():
    assert annulus_bounds(10.0, 0.5) == (5.0, 20.0)
    assert annulus_bounds(10.0, 1.0) == (0.0, math.inf)


def test_annulus_acceptance_high_dimension():
    rng = np.random.default_rng(0)
    points, rejected = sample_annulus(100, 10_000, 0.4, rng)
    assert points.shape == (10_000, 100)
    assert 10_000 / (10_000 + rejected) >= 0.97

    lower, upper = annulus_bounds(10.0, 0.4)
    norms = np.linalg.norm(points, axis=1)
    assert np.all((norms >= lower) & (norms <= upper))


def test_annulus_acceptance_matches_concentration_bound():
    rng = np.random.default_rng(1)
    n, eps = 25, 0.8
    _, rejected = sample_annulus(n, 10_000, eps, rng)
    assert 10_000 / (10_000 + rejected) >= 1 - 2 * math.exp(-(eps**2) * n / 4) - 0.01


def test_annulus_rejects_narrow_epsilon():
    with pytest.raises(DomainError):
        sample_annulus(16, 10, 0.5, np.random.default_rng(0))


def test_annulus_flags_low_acceptance():
    """Test that an off-center shell keeping about a third of the draws is an anomaly"""
    with pytest.raises(SamplingAnomalyError):
        sample_annulus(100, 1000, 0.4, np.random.default_rng(0), radius=17.5)
    with pytest.raises(SamplingAnomalyError):
        sample_annulus(100, 1000, 0.4, np.random.default_rng(0), radius=40.0)


def test_condition_entry_identity(rng):
    """Test that substituting g makes x^T Q x hit the target"""
    for _ in range(50):
        n = int(rng.integers(2, 7))
        a = rng.standard_normal((n, n))
        x = rng.standard_normal(n)
        i = int(np.argmax(np.abs(x)))
        target = float(rng.uniform(0.5, 2.0))
        q = a.T @ a
        q[i, i] = condition_entry(a, target, x, i)
        assert abs(x @ q @ x - target) <= 1e-10 * max(1.0, abs(target))


def test_condition_entry_already_satisfied(rng):
    x = rng.standard_normal(4)
    assert condition_entry(np.eye(4), float(x @ x), x, int(np.argmax(np.abs(x)))) == pytest.approx(1.0, rel=1e-12)


def test_condition_entry_brute_force(rng):
    """Test against solving the scalar equation in the (i, i) entry"""
    a = rng.standard_normal((5, 5))
    x = rng.standard_normal(5)
    i = 2
    q = a.T @ a
    off = x @ q @ x - q[i, i] * x[i] ** 2
    expected = (1.3 - off) / x[i] ** 2
    assert condition_entry(a, 1.3, x, i) == pytest.approx(expected, rel=1e-10)


def test_condition_entry_guard():
    with pytest.raises(PivotDegeneracyError):
        condition_entry(np.eye(2), 1.0, np.array([1e-9, 1.0]), 0)


def test_weight_without_update(rng):
    """Test log-weight 0 when every equation already holds at x"""
    n = 3
    factors = rng.standard_normal((n, n, n))
    x = rng.standard_normal(n)
    weights = np.einsum("jab,b->ja", factors, x)
    weights = np.einsum("ja,ja->j", weights, weights)
    unit = rng.standard_normal((n, n, n))
    assert importance_weight(factors, unit, weights, x, 0) == pytest.approx(0.0, abs=1e-10)


def test_weight_hand_values():
    """Test a = 2, b = 1, g = 0: ((2 - 1)^2 - (0 - 1)^2) / 2 = 0"""
    factors = np.array([[[math.sqrt(2.0)]]])
    unit = np.array([[[1.0]]])
    assert importance_weight(factors, unit, np.array([0.0]), np.array([0.7]), 0) == pytest.approx(0.0, abs=1e-14)

    factors = np.array([[[2.0]]])  # a = 4, g = 1/0.49
    g = 1.0 / 0.49
    expected = ((4 - 1) ** 2 - (g - 1) ** 2) / 2
    assert importance_weight(factors, unit, np.array([1.0]), np.array([0.7]), 0) == pytest.approx(expected)


def test_weight_permutation_invariance(rng):
    n = 4
    factors = rng.standard_normal((n, n, n))
    unit = rng.standard_normal((n, n, n))
    weights = rng.uniform(0.5, 1.5, size=n)
    x = rng.standard_normal(n)
    perm = rng.permutation(n)
    a = importance_weight(factors, unit, weights, x, 1)
    b = importance_weight(factors[perm], unit[perm], weights[perm], x, 1)
    assert a == pytest.approx(b, rel=1e-12)


def _conditioned_map(factors, weights, x, i):
    return np.array([condition_entry(a, c, x, i) for a, c in zip(factors, weights)])


def test_jacobian_matches_finite_differences(rng):
    h = 1e-6
    for _ in range(50):
        n = int(rng.integers(2, 7))
        factors = rng.standard_normal((n, n, n))
        weights = rng.uniform(0.5, 1.5, size=n)
        x = rng.standard_normal(n)
        i = int(np.argmax(np.abs(x)))
        numeric = np.empty((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            forward = _conditioned_map(factors, weights, x + e, i)
            backward = _conditioned_map(factors, weights, x - e, i)
            numeric[:, k] = (forward - backward) / (2 * h)
        analytic = jacobian_dxG(factors, weights, x, i)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6 * np.abs(analytic).max())


def test_jacobian_vanishing_residual(rng):
    n = 4
    factors = rng.standard_normal((n, n, n))
    x = rng.standard_normal(n)
    grams = np.einsum("jai,jak->jik", factors, factors)
    weights = np.einsum("a,jab,b->j", x, grams, x)
    i = int(np.argmax(np.abs(x)))
    expected = -2.0 / x[i] ** 2 * (grams @ x)
    np.testing.assert_allclose(jacobian_dxG(factors, weights, x, i), expected, rtol=1e-10)


def test_jacobian_homogeneity(rng):
    """Test the first bracket scales by t and the residual term by homogeneity"""
    n, t = 3, 1.7
    factors = rng.standard_normal((n, n, n))
    x = rng.standard_normal(n)
    i = int(np.argmax(np.abs(x)))
    grams = np.einsum("jai,jak->jik", factors, factors)
    weights = np.einsum("a,jab,b->j", x, grams, x)
    # on the solution set the map is pure Q x, so scaling x scales it by t / t^2
    np.testing.assert_allclose(
        jacobian_dxG(factors, t**2 * weights, t * x, i), jacobian_dxG(factors, weights, x, i) / t, rtol=1e-10
    )


def _brute_force_single_tuple(normalized, cfg):
    n = normalized.dim
    point_rng = np.random.default_rng([cfg.seed, POINT_STREAM])
    points, _ = sample_annulus(n, cfg.num_points, cfg.resolve_epsilon(n), point_rng)
    pivots, _ = select_pivots(points)
    rng = np.random.default_rng([cfg.seed, TUPLE_STREAM, 0])
    factors = normalized.unit_factors + cfg.delta * rng.standard_normal((n, n, n))
    values = []
    for x, i in zip(points, pivots):
        det = abs(np.linalg.det(jacobian_dxG(factors, normalized.weights, x, int(i))))
        log_w = importance_weight(factors, normalized.unit_factors, normalized.weights, x, int(i))
        values.append(det * math.exp(log_w))
    return float(np.mean(values))


@pytest.mark.parametrize("log_space", [True, False])
def test_single_tuple_matches_point_loop(rng, log_space):
    """Test that M=1 gives exactly the inner average over points"""
    normalized = normalize(random_system(3, "gaussian", rng))
    cfg = RewardConfig(delta=0.05, num_points=60, num_tuples=1, seed=7, log_space=log_space)
    estimate = estimate_reward(normalized, cfg)
    assert estimate.value == pytest.approx(_brute_force_single_tuple(normalized, cfg), rel=1e-9)
    assert estimate.std_error == 0.0


def test_reward_is_deterministic(rng):
    system = random_system(4, "gaussian", rng)
    cfg = RewardConfig(delta=0.05, num_points=300, num_tuples=12, seed=11)
    first = reward_pipeline(system, cfg)
    second = reward_pipeline(system, cfg)
    assert first.to_dict() == second.to_dict()


def test_reward_independent_of_workers_and_chunks(rng):
    system = random_system(4, "gaussian", rng)
    cfg = RewardConfig(delta=0.05, num_points=300, num_tuples=16, seed=3)
    base = reward_pipeline(system, cfg).value
    threaded = reward_pipeline(system, cfg.model_copy(update={"workers": 3})).value
    chunked = reward_pipeline(system, cfg.model_copy(update={"point_chunk": 7})).value
    assert threaded == pytest.approx(base, rel=1e-9)
    assert chunked == pytest.approx(base, rel=1e-9)


def test_log_and_plain_accumulation_agree(rng):
    system = random_system(3, "gaussian", rng)
    cfg = RewardConfig(delta=0.05, num_points=200, num_tuples=8, seed=5)
    log_value = reward_pipeline(system, cfg).value
    plain_value = reward_pipeline(system, cfg.model_copy(update={"log_space": False})).value
    assert log_value == pytest.approx(plain_value, rel=1e-9)


def test_gauge_invariance_of_estimate(rng):
    system = random_system(4, "gaussian", rng)
    cfg = RewardConfig(delta=0.05, num_points=200, num_tuples=8, seed=9)
    assert reward_pipeline(system.scaled(2.5), cfg).value == pytest.approx(reward_pipeline(system, cfg).value, rel=1e-6)


def test_log_transform(rng):
    system = random_system(3, "gaussian", rng)
    cfg = RewardConfig(delta=0.05, num_points=200, num_tuples=8, seed=5, transform="log")
    estimate = reward_pipeline(system, cfg)
    assert estimate.value == pytest.approx(math.log1p(estimate.raw_value))


def test_variance_rescale_and_perturbed_center(rng):
    system = random_system(3, "gaussian", rng)
    cfg = RewardConfig(
        delta=0.05, num_points=200, num_tuples=8, seed=5, variance_rescale=True, annulus_center="perturbed"
    )
    estimate = reward_pipeline(system, cfg)
    assert math.isfinite(estimate.value) and estimate.value >= 0


def test_power_flow_system_scores_positive(path_network):
    system = random_definite_system(path_network, np.random.default_rng(0), unit_rhs=True)
    cfg = RewardConfig(delta=0.05, num_points=500, num_tuples=20, seed=1)
    estimate = reward_pipeline(system, cfg)
    assert math.isfinite(estimate.value) and estimate.value > 0
    assert estimate.accepted_points == 500


def test_degenerate_system_scores_zero():
    system = QuadricSystem.with_unit_rhs(np.stack([np.diag([1.0, 0.0])] * 2))
    estimate = reward_pipeline(system, RewardConfig(num_points=10, num_tuples=2))
    assert estimate.degenerate
    assert estimate.value == 0.0


@patch("quadricrl.reward._tuple_log_mean", return_value=(1000.0, 0))
def test_overflowing_tuple_estimate_fails(mock_tuple, rng):
    normalized = normalize(random_system(3, "gaussian", rng))
    with pytest.raises(EstimationFailedError):
        estimate_reward(normalized, RewardConfig(delta=0.05, num_points=20, num_tuples=2))
    assert mock_tuple.call_count == 2


def test_delta_above_inverse_dimension_is_rejected(rng):
    with pytest.raises(DomainError):
        reward_pipeline(random_system(4, "gaussian", rng), RewardConfig(delta=0.3, num_points=10, num_tuples=2))


@pytest.fixture(scope="module")
def labeled_batch():
    """20 random n=6 systems with their oracle counts"""
    systems = [random_system(6, "gaussian", np.random.default_rng([99, k])) for k in range(20)]
    opts = OracleOptions(exact_dim=6, max_dim=6, seed=0)
    return systems, np.array([count_real_solutions(s, opts).count for s in systems])


@pytest.mark.slow
def test_estimate_ranks_oracle_counts(labeled_batch):
    """Test that high-count systems outscore low-count ones at n=6"""
    systems, counts = labeled_batch
    cfg = RewardConfig(delta=0.01, num_points=20_000, num_tuples=500, seed=0)
    estimates = np.array([reward_pipeline(s, cfg).value for s in systems])
    order = np.argsort(counts, kind="stable")
    assert estimates[order[-5:]].mean() > estimates[order[:5]].mean()


@pytest.mark.slow
def test_small_delta_ranks_better_than_large(labeled_batch):
    """Test that rank correlation with true counts is higher at delta=0.01 than at 0.08"""
    systems, counts = labeled_batch
    wins = 0
    for seed in range(5):
        rho = {}
        for delta in (0.01, 0.08):
            cfg = RewardConfig(delta=delta, num_points=20_000, num_tuples=500, seed=seed)
            rho[delta] = spearmanr(counts, [reward_pipeline(s, cfg).value for s in systems])[0]
        wins += rho[0.01] > rho[0.08]
    assert wins >= 4
