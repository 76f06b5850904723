import numpy as np
import pytest

from dsstitch.gmm import GaussianComponent, MixtureFit
from dsstitch.lpvds import (
    StablePolicy,
    build_matrices,
    evaluate,
    fit_ds_given_gmm,
    fit_lpvds,
    initial_parameters,
    lyapunov_derivative,
    margin_for,
    n_parameters,
    objective_and_gradient,
    verify_stability,
)

from .conftest import linear_policy


def numpy_objective(theta, Xt, V, gamma, delta, d, K):
    _, _, _, _, A = build_matrices(theta, d, K, delta)
    pred = np.einsum("nk,kij,nj->ni", gamma, A, Xt)
    return float(np.mean(np.sum((pred - V) ** 2, axis=1)))


def random_problem(rng, d=2, K=2, n=50):
    Xt = rng.normal(size=(n, d))
    V = rng.normal(size=(n, d))
    g = rng.random((n, K))
    return Xt, V, g / g.sum(axis=1, keepdims=True)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    d, K = 2, 2
    for _ in range(10):
        Xt, V, gamma = random_problem(rng, d, K)
        theta = rng.normal(size=n_parameters(d, K))
        delta = 0.05
        f, grad = objective_and_gradient(theta, Xt, V, gamma, delta)
        assert f == pytest.approx(numpy_objective(theta, Xt, V, gamma, delta, d, K), rel=1e-12)
        h = 1e-6
        fd = np.empty_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (numpy_objective(theta + e, Xt, V, gamma, delta, d, K)
                     - numpy_objective(theta - e, Xt, V, gamma, delta, d, K)) / (2 * h)
        assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)


def test_parameterization_is_stable_for_any_theta():
    rng = np.random.default_rng(1)
    for d, K in [(2, 1), (2, 3), (3, 2)]:
        for _ in range(20):
            theta = 3 * rng.normal(size=n_parameters(d, K))
            _, _, P, _, A = build_matrices(theta, d, K, 0.01)
            assert np.linalg.eigvalsh(P).min() > 0
            for Ak in A:
                assert np.linalg.eigvalsh(Ak.T @ P + P @ Ak).max() < 0


def test_initial_parameters_give_negative_identity():
    _, _, P, _, A = build_matrices(initial_parameters(2, 1), 2, 1, 0.0)
    np.testing.assert_allclose(P, np.eye(2) * (1 + 1e-6))
    np.testing.assert_allclose(A[0], -np.eye(2) / (1 + 1e-6))


def test_recovers_linear_system():
    # data generated by x' = A (x - x*) with a stable A is fitted almost exactly
    rng = np.random.default_rng(2)
    A_true = np.array([[-1.0, 0.6], [-0.6, -1.0]])
    att = np.array([1.0, 2.0])
    X = att + rng.uniform(-3, 3, size=(200, 2))
    V = (X - att) @ A_true.T
    comp = GaussianComponent(1.0, X.mean(axis=0), np.cov(X.T))
    policy, report = fit_ds_given_gmm(MixtureFit((comp,), np.zeros(200, int)), X, V, att, margin_rel=0.01)
    np.testing.assert_allclose(policy.dynamics[0], A_true, atol=1e-3)
    assert report.objective < 1e-6
    assert np.trace(policy.lyapunov) == pytest.approx(2.0)


def test_fitted_demo_policies_are_stable(two_crossing_fits):
    rng = np.random.default_rng(3)
    for policy, _, _, _ in two_crossing_fits:
        rep = verify_stability(policy)
        assert rep.passed
        assert max(rep.margins) < -1e-10
        x = policy.attractor + rng.uniform(-10, 10, size=(10_000, 2))
        assert np.all(lyapunov_derivative(policy, x) < 0)


def test_attractor_is_equilibrium(two_crossing_fits):
    policy = two_crossing_fits[0][0]
    np.testing.assert_allclose(evaluate(policy, policy.attractor), 0.0, atol=1e-14)


def test_roundtrip(two_crossing_fits):
    policy = two_crossing_fits[0][0]
    back = StablePolicy.from_dict(policy.to_dict())
    x = np.random.default_rng(4).normal(size=(20, 2)) * 4
    np.testing.assert_array_equal(back(x), policy(x))


def test_verify_rejects_unstable():
    bad = linear_policy(-np.eye(2), [0.0, 0.0])
    bad = StablePolicy(bad.components, np.array([[[0.1, 0.0], [0.0, -1.0]]]), np.eye(2), bad.attractor)
    assert not verify_stability(bad).passed


def test_margin_scales_with_speed():
    X = np.array([[1.0, 0.0], [3.0, 0.0]])
    V = np.array([[2.0, 0.0], [2.0, 0.0]])
    assert margin_for(X, V, np.zeros(2), 0.1) == pytest.approx(0.1 * 2.0 / 2.0)
    assert margin_for(X, V, np.zeros(2), 0.1, speed=4.0) == pytest.approx(0.2)


def test_fit_is_deterministic(two_crossing):
    demo = two_crossing.demonstrations[1]
    a, _, _ = fit_lpvds(demo.positions, demo.velocities, demo.attractor, 10, 3, demo.trajectory_labels)
    b, _, _ = fit_lpvds(demo.positions, demo.velocities, demo.attractor, 10, 3, demo.trajectory_labels)
    assert a.to_dict() == b.to_dict()
