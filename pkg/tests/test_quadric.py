"""Tests for quadric systems, grams and gradients"""

import numpy as np
import pytest

from quadricrl.errors import DimensionMismatchError, DomainError
from quadricrl.quadric import (
    GramSystem,
    QuadricSystem,
    evaluate,
    gram,
    quadric_gradients,
    random_system,
    system_from_dict,
    system_to_dict,
    load_system,
    save_system,
)


def test_scalar_system_residual():
    """Test n=1: 4 * 0.25 = 1"""
    system = QuadricSystem([[[2.0]]], [1.0])
    assert evaluate(system, np.array([0.5]))[0] == pytest.approx(0.0)


def test_origin_residual_is_negative_rhs(rng):
    """Test that x=0 leaves -r as residual"""
    system = random_system(4, "gaussian", rng).scaled(1.7)
    np.testing.assert_allclose(evaluate(system, np.zeros(4)), -system.rhs)


def test_diagonal_solution(diagonal_system):
    """Test the closed-form solution x^2 = y^2 = 1/5"""
    x = np.full(2, 1 / np.sqrt(5))
    np.testing.assert_allclose(evaluate(diagonal_system, x), [0.0, 0.0], atol=1e-15)


def test_sign_symmetry(rng):
    system = random_system(5, "uniform", rng)
    x = rng.standard_normal(5)
    np.testing.assert_array_equal(evaluate(system, x), evaluate(system, -x))


def test_gram_identity_and_rank_one():
    """Test Q = I for A = I and the rank-one product"""
    identity = gram(QuadricSystem.with_unit_rhs(np.stack([np.eye(3)] * 3)))
    np.testing.assert_array_equal(identity.grams, np.stack([np.eye(3)] * 3))

    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    single = gram(QuadricSystem.with_unit_rhs([a, np.eye(2)]))
    np.testing.assert_array_equal(single.grams[0], [[0.0, 0.0], [0.0, 1.0]])


def test_gram_matches_triple_loop(rng):
    system = random_system(3, "gaussian", rng)
    grams = gram(system).grams
    for k in range(3):
        for i in range(3):
            for j in range(3):
                expected = sum(system.factors[k, a, i] * system.factors[k, a, j] for a in range(3))
                assert grams[k, i, j] == pytest.approx(expected, rel=1e-12)
        np.testing.assert_array_equal(grams[k], grams[k].T)


def test_gram_consistency(rng):
    system = random_system(6, "gaussian", rng)
    grams = gram(system).grams
    for _ in range(20):
        x = rng.standard_normal(6)
        quad = np.einsum("a,kab,b->k", x, grams, x)
        np.testing.assert_allclose(quad, evaluate(system, x) + system.rhs, rtol=1e-12)


def test_gradients_identity_and_origin():
    system = QuadricSystem.with_unit_rhs(np.stack([np.eye(3)] * 3))
    gradients = quadric_gradients(system, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(gradients, np.tile([2.0, 0.0, 0.0], (3, 1)))
    np.testing.assert_array_equal(quadric_gradients(system, np.zeros(3)), np.zeros((3, 3)))


def test_gradients_match_finite_differences(rng):
    """Test gradients against central differences on random systems"""
    h = 1e-6
    for _ in range(100):
        n = int(rng.integers(1, 6))
        system = random_system(n, "gaussian", rng)
        x = rng.standard_normal(n)
        numeric = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            numeric[:, j] = (evaluate(system, x + e) - evaluate(system, x - e)) / (2 * h)
        analytic = quadric_gradients(system, x)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-6 * np.abs(analytic).max())


def test_invalid_systems():
    """Test shape and rhs validation"""
    with pytest.raises(DimensionMismatchError):
        QuadricSystem(np.zeros((2, 3, 3)), np.ones(2))
    with pytest.raises(DimensionMismatchError):
        QuadricSystem(np.zeros((2, 2, 2)), np.ones(3))
    with pytest.raises(DomainError):
        QuadricSystem(np.eye(2)[None].repeat(2, axis=0), np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        QuadricSystem(np.full((2, 2, 2), np.nan), np.ones(2))


def test_point_dimension_mismatch(diagonal_system):
    with pytest.raises(DimensionMismatchError):
        evaluate(diagonal_system, np.ones(3))


def test_system_is_read_only(diagonal_system):
    with pytest.raises(ValueError):
        diagonal_system.factors[0, 0, 0] = 5.0


def test_gram_validate_rejects_indefinite():
    grams = GramSystem(np.stack([np.diag([1.0, -1.0]), np.eye(2)]))
    with pytest.raises(DomainError):
        grams.validate()


def test_random_system_kinds(rng):
    uniform = random_system(4, "uniform", rng)
    assert np.all(np.abs(uniform.factors) <= 1.0)
    np.testing.assert_array_equal(uniform.rhs, np.ones(4))
    with pytest.raises(DomainError):
        random_system(3, "cauchy", rng)


def test_system_json_file(tmp_path, rng):
    system = random_system(3, "gaussian", rng).scaled(2.0)
    path = tmp_path / "system.json"
    save_system(system, path)
    loaded = load_system(path)
    np.testing.assert_array_equal(loaded.factors, system.factors)
    np.testing.assert_array_equal(loaded.rhs, system.rhs)

    data = system_to_dict(system)
    data["dim"] = 4
    with pytest.raises(DimensionMismatchError):
        system_from_dict(data)
