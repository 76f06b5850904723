import numpy as np
import pytest

from dsstitch.datasets import Demonstration, Trajectory, generate_synthetic_2d, make_demonstration_set
from dsstitch.gmm import GaussianComponent
from dsstitch.graph import build_graph, expand_bidirectional, reduce_graph
from dsstitch.lpvds import StablePolicy, fit_demonstrations


@pytest.fixture(scope="session")
def two_crossing():
    return generate_synthetic_2d("two-crossing", 1)


@pytest.fixture(scope="session")
def two_crossing_fits(two_crossing):
    return fit_demonstrations(two_crossing, seed=1)


@pytest.fixture(scope="session")
def two_crossing_graph(two_crossing, two_crossing_fits):
    g = build_graph([(p, m, i) for p, m, _, i in two_crossing_fits])
    return reduce_graph(expand_bidirectional(g, two_crossing))


def linear_policy(A, attractor, mean=None, cov=None) -> StablePolicy:
    """Single-component policy ``A (x - attractor)`` with a Lyapunov matrix
    solved from ``A^T P + P A = -I``."""
    from scipy.linalg import solve_continuous_lyapunov

    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    att = np.asarray(attractor, dtype=float)
    P = solve_continuous_lyapunov(A.T, -np.eye(d))
    comp = GaussianComponent(1.0, att if mean is None else mean, np.eye(d) if cov is None else cov)
    return StablePolicy((comp,), A[None], P, att)


def line_demo(name: str, a, b, n: int = 40, n_traj: int = 3, offset: float = 0.05, dt: float = 0.1) -> Demonstration:
    """Straight demonstrations from ``a`` to ``b`` with exponential slow-down."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    normal = np.array([-(b - a)[1], (b - a)[0]]) / np.linalg.norm(b - a)
    trajs = []
    for j in range(n_traj):
        shift = (j - (n_traj - 1) / 2) * offset * normal
        s = 1.0 - np.exp(-np.linspace(0, 5, n))
        s = s / s[-1]
        pos = (a + shift) + s[:, None] * (b - a - shift)
        vel = np.gradient(pos, dt, axis=0)
        vel[-1] = 0.0
        trajs.append(Trajectory(pos, vel, dt * np.arange(n), dt=dt))
    return Demonstration(name, tuple(trajs), b, bidirectional=True)


@pytest.fixture
def tiny_dataset():
    return make_demonstration_set([line_demo("a", (0, 0), (4, 0)), line_demo("b", (4, 1), (4, 5))])
