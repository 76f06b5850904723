import math

import numpy as np
import pytest

from dsstitch.simulation import fast_velocity, rollout_many, simulate, simulate_policy

from .conftest import linear_policy


def test_exponential_decay_time():
    # x' = -x from |x0| = 1 enters the eps ball after about ln(1 / eps)
    policy = linear_policy(-np.eye(2), [0.0, 0.0])
    for eps in (1e-2, 1e-3, 1e-4):
        res = simulate_policy(policy, np.array([0.6, 0.8]), eps, dt=0.01)
        assert res.success
        assert res.time_to_goal == pytest.approx(math.log(1.0 / eps), rel=0.05)


def test_timeout_reports_failure():
    policy = linear_policy(-0.01 * np.eye(2), [0.0, 0.0])
    res = simulate_policy(policy, np.array([1.0, 0.0]), 1e-3, dt=0.1, t_max=5.0)
    assert not res.success
    assert res.time_to_goal is None
    assert res.times[-1] == pytest.approx(5.0)


def test_speed_cap():
    policy = linear_policy(-np.eye(2), [0.0, 0.0])
    res = simulate_policy(policy, np.array([100.0, 0.0]), 1e-2, v_max=2.0)
    assert np.linalg.norm(res.velocities, axis=1).max() <= 2.0 + 1e-12


def test_compiled_velocity_matches_reference(two_crossing_fits):
    policy = two_crossing_fits[0][0]
    X = np.random.default_rng(0).uniform(-2, 12, size=(200, 2))
    for x in X:
        np.testing.assert_allclose(fast_velocity(policy, x), policy(x), rtol=1e-10, atol=1e-12)


def test_batch_rollouts_match_single(two_crossing_fits):
    policy = two_crossing_fits[1][0]
    starts = np.random.default_rng(1).uniform(0, 10, size=(5, 2))
    ok, times, finals = rollout_many(policy, starts, 0.1)
    for s, o, t, f in zip(starts, ok, times, finals):
        res = simulate(policy, s, 0.1)
        assert res.success == bool(o)
        assert res.time_to_goal == pytest.approx(t)
        np.testing.assert_allclose(res.final, f)


def test_invalid_step():
    policy = linear_policy(-np.eye(2), [0.0, 0.0])
    with pytest.raises(ValueError):
        simulate_policy(policy, np.zeros(2), 1e-3, dt=0.0)


def test_start_at_attractor_succeeds_immediately():
    policy = linear_policy(-np.eye(2), [1.0, 2.0])
    res = simulate_policy(policy, np.array([1.0, 2.0]), 1e-3)
    assert res.success
    assert res.time_to_goal == 0.0
    assert len(res.times) == 1
