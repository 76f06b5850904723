import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from dsstitch.errors import SingularCovariance, TooFewPoints
from dsstitch.gmm import (
    GaussianComponent,
    bhattacharyya_coefficient,
    fit_gmm,
    gaussian_pdf,
    posteriors,
)


def random_spd(rng, d):
    Q = rng.normal(size=(d, d))
    return Q @ Q.T + 0.3 * np.eye(d)


def test_bhattacharyya_matches_monte_carlo():
    # BC = E_p[sqrt(q(x) / p(x))], estimated from 1e6 draws of p
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = int(rng.integers(2, 4))
        a = GaussianComponent(1.0, rng.normal(size=d), random_spd(rng, d))
        b = GaussianComponent(1.0, a.mean + 0.7 * rng.normal(size=d), random_spd(rng, d))
        x = rng.multivariate_normal(a.mean, a.covariance, size=1_000_000)
        lp = multivariate_normal(a.mean, a.covariance).logpdf(x)
        lq = multivariate_normal(b.mean, b.covariance).logpdf(x)
        mc = float(np.mean(np.exp(0.5 * (lq - lp))))
        assert bhattacharyya_coefficient(a, b) == pytest.approx(mc, rel=0.02)


def test_bhattacharyya_limits():
    a = GaussianComponent(0.3, np.zeros(2), np.diag([1.0, 2.0]))
    assert bhattacharyya_coefficient(a, a) == pytest.approx(1.0)
    far = GaussianComponent(0.3, np.array([1e3, 0.0]), np.eye(2))
    assert bhattacharyya_coefficient(a, far) < 1e-100


def test_pdf_matches_scipy():
    rng = np.random.default_rng(1)
    c = GaussianComponent(1.0, rng.normal(size=3), random_spd(rng, 3))
    x = rng.normal(size=3)
    assert gaussian_pdf(c, x) == pytest.approx(multivariate_normal(c.mean, c.covariance).pdf(x), rel=1e-12)


def test_singular_covariance_rejected():
    with pytest.raises(SingularCovariance):
        GaussianComponent(1.0, np.zeros(2), np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.integers(1, 4))
def test_posteriors_form_a_distribution(x, k):
    comps = [GaussianComponent(1.0 / k, np.array([i, -i], float), (0.2 + i) * np.eye(2)) for i in range(k)]
    g = posteriors(comps, np.array(x))
    assert g.shape == (k,)
    assert np.all(g >= 0)
    assert g.sum() == pytest.approx(1.0)


def test_underflow_goes_to_mahalanobis_nearest():
    comps = [
        GaussianComponent(0.5, np.array([0.0, 0.0]), 0.01 * np.eye(2)),
        GaussianComponent(0.5, np.array([10.0, 0.0]), 0.01 * np.eye(2)),
    ]
    g = posteriors(comps, np.array([1e4, 0.0]))
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_fit_recovers_separated_clusters():
    rng = np.random.default_rng(3)
    centers = np.array([[0.0, 0.0], [6.0, 0.0], [6.0, 6.0]])
    X = np.vstack([c + 0.3 * rng.normal(size=(80, 2)) for c in centers])
    V = np.tile([1.0, 0.0], (X.shape[0], 1))
    fit = fit_gmm(X, V, k_max=6, seed=0)
    assert fit.n_components == 3
    found = np.array([c.mean for c in fit.components])
    gaps = np.linalg.norm(centers[:, None] - found[None], axis=2)
    assert sorted(gaps.argmin(axis=1)) == [0, 1, 2]
    assert gaps.min(axis=1).max() < 0.15
    assert sum(c.prior for c in fit.components) == pytest.approx(1.0)
    for k in range(3):
        pts = X[fit.cluster(k)]
        np.testing.assert_allclose(fit.components[k].mean, pts.mean(axis=0), atol=1e-12)


def test_fit_separates_opposite_directions():
    # same positions, opposite motion: the velocity-direction features split them
    rng = np.random.default_rng(4)
    X = np.column_stack([np.linspace(0, 5, 100), 0.05 * rng.normal(size=100)])
    X = np.vstack([X, X + [0.0, 0.4]])
    V = np.vstack([np.tile([1.0, 0.0], (100, 1)), np.tile([-1.0, 0.0], (100, 1))])
    fit = fit_gmm(X, V, k_max=4, seed=0)
    for k in range(fit.n_components):
        dirs = np.sign(V[fit.cluster(k), 0])
        assert np.all(dirs == dirs[0])


def test_fit_is_deterministic(two_crossing):
    demo = two_crossing.demonstrations[0]
    a = fit_gmm(demo.positions, demo.velocities, 10, 5, trajectory_labels=demo.trajectory_labels)
    b = fit_gmm(demo.positions, demo.velocities, 10, 5, trajectory_labels=demo.trajectory_labels)
    np.testing.assert_array_equal(a.assignments, b.assignments)


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        fit_gmm(np.zeros((3, 2)), np.zeros((3, 2)), 2, 0)
