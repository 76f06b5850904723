"""Explicit-Euler rollouts of policies and DS-Chains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .lpvds import StablePolicy

DEFAULT_DT = 0.01
DEFAULT_T_MAX = 1000.0


@dataclass
class SimulationResult:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    success: bool
    time_to_goal: float | None
    modes: np.ndarray | None = None
    mode_trace: list[int] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]


_PACKS: dict[int, tuple[StablePolicy, _kernels.PolicyPack]] = {}


def policy_pack(policy: StablePolicy) -> _kernels.PolicyPack:
    hit = _PACKS.get(id(policy))
    if hit is not None and hit[0] is policy:
        return hit[1]
    pack = _kernels.pack_policy(policy)
    if len(_PACKS) > 4096:
        _PACKS.clear()
    _PACKS[id(policy)] = (policy, pack)
    return pack


def fast_velocity(policy: StablePolicy, x: np.ndarray) -> np.ndarray:
    out = np.empty(policy.dimension)
    _kernels.lpv_velocity(np.ascontiguousarray(x, dtype=float), *policy_pack(policy), out)
    return out


def _n_steps(dt: float, t_max: float) -> int:
    if not dt > 0 or not t_max >= dt:
        raise ValueError("need dt > 0 and t_max >= dt")
    return int(math.floor(t_max / dt + 1e-9))


def simulate_policy(
    policy: StablePolicy,
    x0: np.ndarray,
    eps_goal: float,
    dt: float = DEFAULT_DT,
    t_max: float = DEFAULT_T_MAX,
    v_max: float | None = None,
) -> SimulationResult:
    n_steps = _n_steps(dt, t_max)
    x0 = np.ascontiguousarray(x0, dtype=float).reshape(-1)
    pos, vel, n, ok = _kernels.rollout(
        x0, policy.attractor, dt, n_steps, eps_goal, v_max or 0.0, *policy_pack(policy)
    )
    times = dt * np.arange(n)
    return SimulationResult(times, pos[:n].copy(), vel[:n].copy(), bool(ok), float(times[-1]) if ok else None)


def rollout_many(
    policy: StablePolicy,
    starts: np.ndarray,
    eps_goal: float,
    dt: float = DEFAULT_DT,
    t_max: float = DEFAULT_T_MAX,
    v_max: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Success flags, times to goal and final states for many starts."""
    starts = np.ascontiguousarray(np.atleast_2d(starts), dtype=float)
    return _kernels.rollout_endpoints(
        starts, policy.attractor, dt, _n_steps(dt, t_max), eps_goal, v_max or 0.0, *policy_pack(policy)
    )


def simulate(target, x0, eps_goal: float, dt: float = DEFAULT_DT, t_max: float = DEFAULT_T_MAX, v_max=None):
    """Roll out a :class:`StablePolicy` or a DS-Chain from ``x0`` until the
    goal ball of radius ``eps_goal`` is entered or ``t_max`` elapses."""
    if isinstance(target, StablePolicy):
        return simulate_policy(target, x0, eps_goal, dt, t_max, v_max)
    from .chaining import simulate_chain

    return simulate_chain(target, x0, eps_goal, dt, t_max, v_max)
