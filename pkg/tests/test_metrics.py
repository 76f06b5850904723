import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsstitch.datasets import Demonstration, Trajectory, make_demonstration_set
from dsstitch.errors import DegenerateSupportStats
from dsstitch.metrics import chain_point_policies, data_support, support_model, velocity_rmse

from .conftest import linear_policy
from .test_chaining import line_chain


def test_rmse_of_constant_offset():
    policy = linear_policy(-np.eye(2), [0.0, 0.0])
    X = np.random.default_rng(0).normal(size=(50, 2))
    c = np.array([0.3, -0.4])
    assert velocity_rmse(policy, X, policy(X) + c) == pytest.approx(0.5, rel=1e-12)
    assert velocity_rmse(policy, X, policy(X)) == 0.0


def test_chain_point_assignment():
    chain = line_chain()
    chain = type(chain)(chain.policies, chain.anchors, chain.timers, chain.alpha, chain.goal, vertices=(None,) * 4)
    assert chain_point_policies(chain, [0, 1, 2, 3]) == [(0,), (0, 1), (1, 2), (2,)]


def test_chain_rmse_uses_mixed_policies():
    chain = line_chain()
    chain = type(chain)(chain.policies, chain.anchors, chain.timers, chain.alpha, chain.goal, vertices=(None,) * 4)
    X = np.array([[0.5, 0.0], [1.5, 0.0]])
    V = np.stack([chain.policies[0](X[0]), 0.5 * (chain.policies[0](X[1]) + chain.policies[1](X[1]))])
    assert velocity_rmse(chain, X, V, np.array([0, 1])) == pytest.approx(0.0, abs=1e-15)


def grid_dataset(spacing=1.0):
    """Parallel horizontal trajectories ``spacing`` apart."""
    demos = []
    for i in range(3):
        x = np.linspace(0, 10, 41)
        pos = np.column_stack([x, np.full_like(x, i * spacing)])
        vel = np.tile([1.0, 0.0], (41, 1))
        demos.append(Demonstration(f"d{i}", (Trajectory(pos, vel, np.arange(41.0)),), pos[-1]))
    return make_demonstration_set(demos)


def uneven_dataset():
    """Rows at y = 0, 1.5, 3 and 4: two distinct neighbour gaps."""
    x = np.linspace(0, 10, 41)
    pos = np.column_stack([x, np.full_like(x, 4.0)])
    extra = Demonstration("d3", (Trajectory(pos, np.tile([1.0, 0.0], (41, 1)), np.arange(41.0)),), pos[-1])
    return make_demonstration_set(list(grid_dataset(1.5)) + [extra])


def test_support_anchors():
    ds = uneven_dataset()
    model = support_model(ds)
    mu, sigma = model.stats.mu, model.stats.sigma
    assert sigma > 0
    # on the data the score is 1; one sigma beyond the mean gap it is exp(-1/2)
    assert data_support(ds.positions, model) == 1.0
    far = np.array([[5.0, -(mu + sigma)]])
    assert data_support(far, model) == pytest.approx(math.exp(-0.5), rel=1e-12)
    very_far = np.array([[5.0, -100.0]])
    assert data_support(very_far, model) < 1e-100


def test_neighbours_come_from_other_trajectories():
    ds = grid_dataset(2.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = support_model(ds)
    # along-track spacing is 0.25 but the inter-trajectory gap is 2
    assert model.stats.mu == pytest.approx(2.0)
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
    assert model.stats.degenerate


def test_degenerate_strict_raises():
    with pytest.raises(DegenerateSupportStats):
        support_model(grid_dataset(2.0), strict=True)


def test_hard_threshold_fallback():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = support_model(grid_dataset(2.0))
    assert data_support(np.array([[5.0, -1.0]]), model) == 1.0
    assert data_support(np.array([[5.0, -3.0]]), model) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), min_size=1, max_size=30))
def test_support_is_a_fraction(points):
    s = data_support(np.array(points), support_model(uneven_dataset(), strict=True))
    assert 0.0 <= s <= 1.0
