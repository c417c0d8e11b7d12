"""Tests for the log-det scaling solver"""

import numpy as np
import pytest

from quadricrl.config import OracleOptions, ScalingOptions
from quadricrl.errors import DegenerateSystemError, DimensionMismatchError
from quadricrl.normalization import (
    finalize,
    load_normalized,
    newton_corrector,
    normalize,
    save_normalized,
    scaling_hessian,
    scaling_objective,
)
from quadricrl.oracle import count_real_solutions
from quadricrl.quadric import GramSystem, QuadricSystem, evaluate, gram, random_system


def _random_grams(rng, n):
    factors = rng.standard_normal((n, n, n))
    return GramSystem(np.einsum("kai,kaj->kij", factors, factors))


def _fd_gradient(t, grams, h=1e-6):
    g = np.empty_like(t)
    for j in range(t.size):
        e = np.zeros_like(t)
        e[j] = h
        g[j] = (scaling_objective(t + e, grams)[0] - scaling_objective(t - e, grams)[0]) / (2 * h)
    return g


def _fd_hessian(t, grams, h=1e-5):
    hess = np.empty((t.size, t.size))
    for j in range(t.size):
        e = np.zeros_like(t)
        e[j] = h
        hess[:, j] = (scaling_objective(t + e, grams)[1] - scaling_objective(t - e, grams)[1]) / (2 * h)
    return hess


def test_identity_stationary_point():
    """Test value n ln n and zero gradient for Q_i = I at t = 0"""
    for n in (2, 3, 5):
        grams = GramSystem(np.stack([np.eye(n)] * n))
        value, gradient = scaling_objective(np.zeros(n - 1), grams)
        assert value == pytest.approx(n * np.log(n), rel=1e-12)
        np.testing.assert_allclose(gradient, 0.0, atol=1e-14)


def test_gradient_near_singular_pair():
    eps = 1e-3
    grams = GramSystem(np.stack([np.diag([1.0, 0.0]) + eps * np.eye(2), np.diag([0.0, 1.0]) + eps * np.eye(2)]))
    t = np.zeros(1)
    np.testing.assert_allclose(scaling_objective(t, grams)[1], _fd_gradient(t, grams), atol=1e-6)


def test_gradient_and_hessian_match_finite_differences(rng):
    """Test gradient and Hessian on random PD instances"""
    for _ in range(100):
        n = int(rng.integers(2, 11))
        grams = _random_grams(rng, n)
        t = rng.uniform(-0.5, 0.5, size=n - 1)
        gradient = scaling_objective(t, grams)[1]
        np.testing.assert_allclose(gradient, _fd_gradient(t, grams), rtol=1e-6, atol=1e-7)
        hessian = scaling_hessian(t, grams)
        np.testing.assert_allclose(hessian, _fd_hessian(t, grams), rtol=1e-5, atol=1e-6)


def test_hessian_is_symmetric(rng):
    grams = _random_grams(rng, 6)
    hessian = scaling_hessian(rng.standard_normal(5) * 0.3, grams)
    np.testing.assert_allclose(hessian, hessian.T, atol=1e-10)


def test_scalar_hessian_matches_second_difference(rng):
    grams = _random_grams(rng, 2)
    t, h = np.array([0.2]), 1e-4
    f = lambda s: scaling_objective(np.array([s]), grams)[0]  # noqa: E731
    second = (f(t[0] + h) - 2 * f(t[0]) + f(t[0] - h)) / h**2
    assert scaling_hessian(t, grams)[0, 0] == pytest.approx(second, rel=1e-5)


def test_objective_is_convex_along_segments(rng):
    grams = _random_grams(rng, 5)
    for _ in range(100):
        a, b = rng.uniform(-2, 2, size=(2, 4))
        fa = scaling_objective(a, grams)[0]
        fb = scaling_objective(b, grams)[0]
        fm = scaling_objective(0.5 * (a + b), grams)[0]
        assert fm <= 0.5 * (fa + fb) + 1e-9


def test_objective_rejects_bad_input():
    grams = GramSystem(np.stack([np.diag([1.0, 0.0]), np.diag([1.0, 0.0])]))
    with pytest.raises(DegenerateSystemError):
        scaling_objective(np.zeros(1), grams)
    with pytest.raises(DimensionMismatchError):
        scaling_objective(np.zeros(3), grams)


def test_identity_system_normalization():
    """Test Z = I / sqrt(3), c_i = 1 for A_i = I"""
    system = QuadricSystem.with_unit_rhs(np.stack([np.eye(3)] * 3))
    normalized = normalize(system)
    np.testing.assert_allclose(normalized.basis, np.eye(3) / np.sqrt(3), atol=1e-12)
    np.testing.assert_allclose(normalized.weights, np.ones(3), atol=1e-12)
    assert normalized.trace_distance <= 1e-12
    assert normalized.summation_distance <= 1e-12


def test_diagonal_pair_sums_to_identity():
    system = QuadricSystem.with_unit_rhs([np.diag([2.0, 1.0]), np.diag([1.0, 2.0])])
    normalized = normalize(system)
    summed = np.einsum("kai,kaj->ij", normalized.unit_factors, normalized.unit_factors)
    np.testing.assert_allclose(summed, np.eye(2), atol=1e-10)


def test_post_normalization_identities(rng):
    for n in (3, 8, 20):
        normalized = normalize(random_system(n, "gaussian", rng), ScalingOptions())
        norms = np.linalg.norm(normalized.unit_factors, axis=(1, 2))
        np.testing.assert_allclose(norms, 1.0, atol=1e-8)
        assert abs(normalized.weights.sum() - n) <= 1e-8
        assert normalized.summation_distance <= 1e-8


def test_scale_maps_solutions_back(diagonal_system):
    """Test x = Z (g / sqrt(n)) u on the closed-form solution"""
    normalized = normalize(diagonal_system)
    x = np.full(2, 1 / np.sqrt(5))
    u = normalized.from_original(x)
    residual = evaluate(normalized.as_system(), u)
    np.testing.assert_allclose(residual, 0.0, atol=1e-10)
    np.testing.assert_allclose(normalized.to_original(u), x, atol=1e-12)


def test_solution_sets_correspond(rng):
    """Test that oracle solutions of the normalized system map to original ones"""
    opts = OracleOptions(seed=1)
    for n in (2, 3):
        system = random_system(n, "gaussian", rng)
        normalized = normalize(system)
        scaled = count_real_solutions(normalized.as_system(), opts)
        original = count_real_solutions(system, opts)
        assert scaled.count == original.count
        for u in scaled.solutions:
            assert np.max(np.abs(evaluate(system, normalized.to_original(u)))) <= 1e-8


def test_gauge_invariance(rng):
    system = random_system(5, "gaussian", rng)
    plain = normalize(system)
    gauged = normalize(system.scaled(3.0))
    np.testing.assert_allclose(gauged.unit_factors, plain.unit_factors, atol=1e-10)
    np.testing.assert_allclose(gauged.weights, plain.weights, atol=1e-10)


def test_corrector_zero_steps_is_identity(rng):
    grams = _random_grams(rng, 4)
    t = rng.standard_normal(3)
    outcome = newton_corrector(t, grams, 0)
    np.testing.assert_array_equal(outcome.t, t)
    assert not outcome.failed


def test_corrector_converges_quadratically(rng):
    """Test Newton contraction from a perturbed minimizer"""
    system = random_system(5, "gaussian", rng)
    grams = gram(system)
    t_star = normalize(system).t
    start = t_star + 1e-3 * rng.standard_normal(4)
    before = finalize(system, grams, start)["trace_distance"]
    outcome = newton_corrector(start, grams, 2)
    assert not outcome.failed
    after = finalize(system, grams, outcome.t)["trace_distance"]
    assert after <= max(100.0 * before**2, 1e-10)


def test_corrector_flags_converged_input(rng):
    """Test that a minimizer with nothing left to gain is flagged, not changed"""
    grams = GramSystem(np.stack([np.eye(3)] * 3))
    outcome = newton_corrector(np.zeros(2), grams, 3)
    assert outcome.failed
    np.testing.assert_array_equal(outcome.t, np.zeros(2))


def test_normalize_with_corrector_records_flag(rng):
    normalized = normalize(random_system(6, "gaussian", rng), ScalingOptions(corrector_steps=5))
    assert normalized.corrector_steps == 5
    assert isinstance(normalized.corrector_failed, bool)
    assert normalized.summation_distance <= 1e-8


def test_scalar_system_skips_optimization():
    normalized = normalize(QuadricSystem([[[2.0]]], [1.0]))
    assert normalized.iterations == 0
    np.testing.assert_allclose(normalized.weights, [1.0])


def test_initial_t_shape_is_checked(rng):
    with pytest.raises(DimensionMismatchError):
        normalize(random_system(3, "gaussian", rng), ScalingOptions(initial_t=(0.0,)))


def test_normalized_file_round_trip(tmp_path, rng):
    normalized = normalize(random_system(4, "gaussian", rng))
    path = tmp_path / "normalized.json"
    save_normalized(normalized, path)
    loaded = load_normalized(path)
    np.testing.assert_array_equal(loaded.unit_factors, normalized.unit_factors)
    np.testing.assert_array_equal(loaded.t, normalized.t)
    assert loaded.trace_distance == normalized.trace_distance


@pytest.mark.slow
def test_scaling_accuracy_at_fifty(rng):
    """Test mean trace distance <= 1e-4 and summation distance <= 1e-10 at n=50"""
    results = [normalize(random_system(50, "gaussian", np.random.default_rng([0, 50, k]))) for k in range(50)]
    assert np.mean([r.trace_distance for r in results]) <= 1e-4
    assert np.mean([r.summation_distance for r in results]) <= 1e-10
