"""Demonstration chaining: a hybrid automaton that sequences local stable
policies along a graph path.

A chain holds policies ``f_1 .. f_N`` (the last one, ``f*``, is stable at the
goal). Mode ``s_i`` runs ``f_i`` until the trigger of its vertex triplet
fires, then intermediate mode ``s_i'`` blends ``f_i`` into ``f_{i+1}`` over
``T_i`` seconds before entering ``s_{i+1}``.

Modes are encoded as integers: ``2 * i`` is nominal ``s_{i+1}`` and
``2 * i + 1`` is intermediate ``s_{i+1}'`` (zero-based ``i``), so a run's
mode index is non-decreasing.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .datasets import DemonstrationSet
from .errors import EmptySelection, SegmentReversalConflict
from .gmm import min_fit_points
from .graph import GaussianGraph, GraphVertex
from .lpvds import DEFAULT_MARGIN, StablePolicy, fit_ds_given_gmm, fit_lpvds, verify_stability
from .simulation import DEFAULT_DT, DEFAULT_T_MAX, SimulationResult, policy_pack
from .stitching import FilteredData, Reuse, collect_filtered_data, selection_mixture

DEFAULT_ALPHA = 0.5
T_CAP = 100.0
V_FLOOR_REL = 1e-6
DROP_FAR = 1.0
DROP_NEAR = 0.1
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# formula pieces


def trigger_fired(mu_a: np.ndarray, mu_b: np.ndarray, mu_c: np.ndarray, x: np.ndarray) -> bool:
    """True once ``x`` has passed ``mu_b`` on its way from ``mu_a`` to ``mu_c``:
    ``|x - a| / |x - c| >= |b - a| / |b - c|``, with ``x = c`` counting as
    passed."""
    f = lambda v: np.ascontiguousarray(v, dtype=float).reshape(-1)  # noqa: E731
    return bool(_kernels.trigger_fired(f(mu_a), f(mu_b), f(mu_c), f(x)))


def timer_duration(
    f_i: StablePolicy,
    f_next: StablePolicy,
    mu_b: np.ndarray,
    mu_c: np.ndarray,
    alpha: float,
    v_floor: float = 0.0,
    t_cap: float = T_CAP,
) -> float:
    """Time to cover a fraction ``alpha`` of ``|mu_c - mu_b|`` at the mean of
    the two policies' velocities at ``mu_b``; ``t_cap`` when that speed falls
    below ``v_floor``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        return 0.0
    speed = float(np.linalg.norm(f_i(mu_b) + f_next(mu_b))) / 2.0
    if speed < v_floor or speed == 0.0:
        return t_cap
    return alpha * float(np.linalg.norm(np.asarray(mu_c) - np.asarray(mu_b))) / speed


def transition_velocity(
    f_i: StablePolicy, f_next: StablePolicy, x: np.ndarray, elapsed: float, duration: float
) -> np.ndarray:
    """``(1 - s) f_i(x) + s f_next(x)`` with ``s = min(elapsed / duration, 1)``."""
    if elapsed < 0:
        raise ValueError("elapsed time must be non-negative")
    if duration == 0.0:
        return f_next(x)
    s = min(elapsed / duration, 1.0)
    return (1.0 - s) * f_i(x) + s * f_next(x)


# ---------------------------------------------------------------------------
# segment table


def _triplet_key(vertices: Sequence[GraphVertex]) -> tuple[str, ...]:
    return tuple(v.key for v in vertices)


def check_window(vertices: Sequence[GraphVertex]) -> None:
    seen = set()
    for v in vertices:
        if v.pair_key in seen:
            raise SegmentReversalConflict(
                "window contains a vertex together with its reversal: " + ", ".join(v.key for v in vertices)
            )
        seen.add(v.pair_key)


def segment_data(triplet: Sequence[GraphVertex], dataset: DemonstrationSet) -> FilteredData:
    """Clustered points of the three vertices minus the points of the last
    vertex lying beyond ``l`` from the middle mean yet within ``0.1 l`` of
    the last mean (``l`` the distance between the last two means)."""
    data = collect_filtered_data(triplet, dataset)
    mu_b, mu_c = triplet[1].mean, triplet[2].mean
    ell = float(np.linalg.norm(mu_c - mu_b))
    far = np.linalg.norm(data.positions - mu_b, axis=1) > DROP_FAR * ell
    near = np.linalg.norm(data.positions - mu_c, axis=1) < DROP_NEAR * ell
    keep = ~((data.vertex_labels == 2) & far & near)
    return FilteredData(
        data.positions[keep], data.velocities[keep], data.vertex_labels[keep], data.trajectory_labels[keep]
    )


def fit_window(
    vertices: Sequence[GraphVertex],
    data: FilteredData,
    attractor: np.ndarray,
    reuse: Reuse,
    seed: int,
    margin_rel: float = DEFAULT_MARGIN,
    speed: float | None = None,
) -> StablePolicy:
    """Fit one local policy on a window's data at either reuse level. Mixture
    refits search at most one component per vertex. ``speed`` sets the
    stability margin's reference speed."""
    if len(data) == 0:
        raise EmptySelection("window carries no data points")
    if reuse is Reuse.DS or len(data) < min_fit_points(data.positions.shape[1]):
        # a window too small to refit a mixture keeps its vertices' Gaussians
        present = sorted(set(data.vertex_labels.tolist()))
        remap = np.searchsorted(present, data.vertex_labels)
        mixture = selection_mixture([vertices[i] for i in present], FilteredData(
            data.positions, data.velocities, remap, data.trajectory_labels
        ))
        policy, _ = fit_ds_given_gmm(
            mixture, data.positions, data.velocities, attractor, margin_rel=margin_rel, speed=speed
        )
        return policy
    policy, _, _ = fit_lpvds(
        data.positions,
        data.velocities,
        attractor,
        len(vertices),
        seed,
        trajectory_labels=data.trajectory_labels,
        margin_rel=margin_rel,
        speed=speed,
    )
    return policy


@dataclass
class SegmentTable:
    """Segment policies keyed by (vertex key triple, reuse level). ``fits``
    counts policies fitted on misses since construction, ``fit_seconds``
    their wall time."""

    entries: dict[tuple[tuple[str, ...], str], StablePolicy] = field(default_factory=dict)
    fits: int = 0
    hits: int = 0
    fit_seconds: float = 0.0

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(
        self,
        triplet: Sequence[GraphVertex],
        reuse: Reuse,
        dataset: DemonstrationSet,
        seed: int,
        margin_rel: float = DEFAULT_MARGIN,
    ) -> StablePolicy:
        key = (_triplet_key(triplet), reuse.value)
        hit = self.entries.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        check_window(triplet)
        t0 = time.perf_counter()
        policy = fit_window(
            triplet, segment_data(triplet, dataset), triplet[2].mean, reuse, seed, margin_rel, dataset.mean_speed()
        )
        self.fit_seconds += time.perf_counter() - t0
        self.entries[key] = policy
        self.fits += 1
        return policy

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "entries": [
                {"vertices": list(k), "reuse": r, "model": p.to_dict()}
                for (k, r), p in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SegmentTable":
        if raw.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported segment table version {raw.get('version')!r}")
        return cls(
            {(tuple(e["vertices"]), e["reuse"]): StablePolicy.from_dict(e["model"]) for e in raw["entries"]}
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "SegmentTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def realizable_triplets(graph: GaussianGraph) -> list[tuple[int, int, int]]:
    """Every edge ``(i, j)`` followed by an edge ``(j, k)`` with ``k != i`` and
    no vertex paired with its own reversal."""
    out = []
    for i in sorted(graph.edges):
        for j in sorted(graph.edges[i]):
            for k in sorted(graph.edges.get(j, {})):
                if k == i:
                    continue
                keys = {graph.vertices[m].pair_key for m in (i, j, k)}
                if len(keys) == 3:
                    out.append((i, j, k))
    return out


def precompute_segment_table(
    graph: GaussianGraph,
    reuse: Reuse,
    dataset: DemonstrationSet,
    seed: int = 0,
    table: SegmentTable | None = None,
    margin_rel: float = DEFAULT_MARGIN,
) -> SegmentTable:
    table = table if table is not None else SegmentTable()
    for i, j, k in realizable_triplets(graph):
        table.lookup([graph.vertices[m] for m in (i, j, k)], reuse, dataset, seed, margin_rel)
    return table


# ---------------------------------------------------------------------------
# the automaton


@dataclass(frozen=True, eq=False)
class DSChain:
    """Policies ``F``, trigger anchors (one ``(3, d)`` triple per transition),
    timer durations and the blending rule's ``alpha``.

    ``window_keys[i]`` is the vertex key triple of a table-backed segment
    policy, or ``None`` for the goal policy and the optional initial one."""

    policies: tuple[StablePolicy, ...]
    anchors: np.ndarray
    timers: np.ndarray
    alpha: float
    goal: np.ndarray
    vertices: tuple[GraphVertex, ...] = ()
    window_keys: tuple[tuple[str, ...] | None, ...] = ()
    reuse: Reuse = Reuse.ALL
    initial: bool = False
    start: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = len(self.policies)
        d = self.goal.size
        anchors = np.asarray(self.anchors, dtype=float).reshape(max(n - 1, 0), 3, d)
        timers = np.asarray(self.timers, dtype=float).reshape(-1)
        if n == 0 or timers.size != n - 1:
            raise ValueError("a chain needs N >= 1 policies and N - 1 triggers and timers")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "timers", timers)
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).reshape(-1))
        if not self.window_keys:
            object.__setattr__(self, "window_keys", (None,) * n)

    @property
    def n_policies(self) -> int:
        return len(self.policies)

    @property
    def final_mode(self) -> int:
        return 2 * (self.n_policies - 1)

    def with_timers(self, timers: np.ndarray) -> "DSChain":
        return DSChain(
            self.policies, self.anchors, timers, self.alpha, self.goal, self.vertices,
            self.window_keys, self.reuse, self.initial, self.start,
        )

    def with_policies(self, policies: Sequence[StablePolicy]) -> "DSChain":
        return DSChain(
            tuple(policies), self.anchors, self.timers, self.alpha, self.goal, self.vertices,
            self.window_keys, self.reuse, self.initial, self.start,
        )

    def to_dict(self, table_path: str | None = None) -> dict:
        """Table-backed policies are written as references when
        ``table_path`` is given, inline otherwise."""
        policies = []
        for p, key in zip(self.policies, self.window_keys):
            if key is not None and table_path is not None:
                policies.append({"segment": list(key), "reuse": self.reuse.value})
            else:
                policies.append({"model": p.to_dict()})
        return {
            "version": FORMAT_VERSION,
            "kind": "chain",
            "alpha": self.alpha,
            "goal": self.goal.tolist(),
            "start": None if self.start is None else np.asarray(self.start).tolist(),
            "initial": self.initial,
            "reuse": self.reuse.value,
            "segment_table": table_path,
            "policies": policies,
            "window_keys": [None if k is None else list(k) for k in self.window_keys],
            "triggers": self.anchors.tolist(),
            "timers": self.timers.tolist(),
            "vertices": [v.to_dict() for v in self.vertices],
        }

    @classmethod
    def from_dict(cls, raw: dict, table: SegmentTable | None = None) -> "DSChain":
        if raw.get("version") != FORMAT_VERSION or raw.get("kind") != "chain":
            raise ValueError("not a chain file")
        reuse = Reuse(raw["reuse"])
        policies = []
        for entry in raw["policies"]:
            if "model" in entry:
                policies.append(StablePolicy.from_dict(entry["model"]))
                continue
            key = (tuple(entry["segment"]), entry["reuse"])
            if table is None or key not in table.entries:
                raise KeyError(f"segment {key} missing from the segment table")
            policies.append(table.entries[key])
        return cls(
            tuple(policies),
            np.array(raw["triggers"], dtype=float),
            np.array(raw["timers"], dtype=float),
            float(raw["alpha"]),
            np.array(raw["goal"], dtype=float),
            tuple(GraphVertex.from_dict(v) for v in raw["vertices"]),
            tuple(None if k is None else tuple(k) for k in raw["window_keys"]),
            reuse,
            bool(raw["initial"]),
            None if raw["start"] is None else np.array(raw["start"], dtype=float),
        )


@dataclass
class ChainExecState:
    mode: int = 0
    entry_time: float = 0.0

    @property
    def policy_index(self) -> int:
        return self.mode // 2

    @property
    def intermediate(self) -> bool:
        return self.mode % 2 == 1


def build_chain(
    selection: Sequence[GraphVertex],
    goal: np.ndarray,
    dataset: DemonstrationSet,
    reuse: Reuse = Reuse.ALL,
    alpha: float = DEFAULT_ALPHA,
    start: np.ndarray | None = None,
    initial: bool = False,
    seed: int = 0,
    table: SegmentTable | None = None,
    margin_rel: float = DEFAULT_MARGIN,
) -> DSChain:
    """Chain for a path ``selection``: one policy per overlapping vertex
    triplet (stable at the triplet's last mean), then ``f*`` on the last two
    vertices (stable at ``goal``). Paths of one or two vertices give ``f*``
    alone. ``initial`` prepends ``f_0`` on the first vertex's data, stable at
    its mean and handed over at the midpoint between ``start`` and that
    mean."""
    sel = tuple(selection)
    if not sel:
        raise EmptySelection("vertex selection is empty")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    goal = np.asarray(goal, dtype=float).reshape(-1)
    if initial and start is None:
        raise ValueError("the initial policy needs a start position")
    table = table if table is not None else SegmentTable()
    M = len(sel)
    for w in range(max(M - 2, 1)):
        check_window(sel[w : w + 3])

    policies: list[StablePolicy] = []
    anchors: list[np.ndarray] = []
    keys: list[tuple[str, ...] | None] = []
    if initial:
        first = sel[0]
        data = collect_filtered_data([first], dataset)
        policies.append(fit_window([first], data, first.mean, reuse, seed, margin_rel, dataset.mean_speed()))
        x0 = np.asarray(start, dtype=float).reshape(-1)
        anchors.append(np.stack([x0, 0.5 * (x0 + first.mean), first.mean]))
        keys.append(None)
    for w in range(M - 2):
        trip = sel[w : w + 3]
        policies.append(table.lookup(trip, reuse, dataset, seed, margin_rel))
        keys.append(_triplet_key(trip))
        anchors.append(np.stack([v.mean for v in trip]))
    tail = sel[-2:] if M >= 3 else sel
    tail_data = collect_filtered_data(tail, dataset)
    policies.append(fit_window(tail, tail_data, goal, reuse, seed, margin_rel, dataset.mean_speed()))
    keys.append(None)

    v_floor = V_FLOOR_REL * dataset.diagonal()
    timers = [
        timer_duration(policies[i], policies[i + 1], anchors[i][1], anchors[i][2], alpha, v_floor)
        for i in range(len(policies) - 1)
    ]
    d = goal.size
    return DSChain(
        tuple(policies),
        np.array(anchors, dtype=float).reshape(len(anchors), 3, d),
        np.array(timers, dtype=float),
        alpha,
        goal,
        sel,
        tuple(keys),
        reuse,
        initial,
        None if start is None else np.asarray(start, dtype=float).reshape(-1),
    )


def step_chain(
    chain: DSChain, state: ChainExecState, x: np.ndarray, t: float
) -> tuple[np.ndarray, ChainExecState]:
    """Fire every enabled transition at ``(x, t)``, then return the active
    velocity and the (new) state. The input state is not modified."""
    x = np.asarray(x, dtype=float).reshape(-1)
    mode, entry = state.mode, state.entry_time
    while mode < chain.final_mode:
        i = mode // 2
        if mode % 2 == 0:
            if trigger_fired(*chain.anchors[i], x):
                mode, entry = mode + 1, t
                continue
        elif t - entry >= chain.timers[i]:
            mode, entry = mode + 1, t
            continue
        break
    i = mode // 2
    if mode % 2 == 0:
        v = chain.policies[i](x)
    else:
        v = transition_velocity(chain.policies[i], chain.policies[i + 1], x, t - entry, chain.timers[i])
    return v, ChainExecState(mode, entry)


def _packed(chain: DSChain):
    packs = [policy_pack(p) for p in chain.policies]
    offsets = np.cumsum([0] + [p.means.shape[0] for p in packs]).astype(np.int64)
    return (
        np.ascontiguousarray(np.concatenate([p.means for p in packs])),
        np.ascontiguousarray(np.concatenate([p.chols for p in packs])),
        np.ascontiguousarray(np.concatenate([p.log_weights for p in packs])),
        np.ascontiguousarray(np.concatenate([p.dynamics for p in packs])),
        np.ascontiguousarray(np.stack([p.attractor for p in packs])),
        offsets,
    )


def simulate_chain(
    chain: DSChain,
    x0: np.ndarray,
    eps_goal: float,
    dt: float = DEFAULT_DT,
    t_max: float = DEFAULT_T_MAX,
    v_max: float | None = None,
) -> SimulationResult:
    if not dt > 0 or not t_max >= dt:
        raise ValueError("need dt > 0 and t_max >= dt")
    n_steps = int(math.floor(t_max / dt + 1e-9))
    x0 = np.ascontiguousarray(x0, dtype=float).reshape(-1)
    anchors = np.ascontiguousarray(chain.anchors.reshape(-1, 3, x0.size))
    if anchors.shape[0] == 0:
        anchors = np.zeros((1, 3, x0.size))
    timers = np.ascontiguousarray(chain.timers if chain.timers.size else np.zeros(1))
    pos, vel, modes, trace, n_trace, n, ok = _kernels.rollout_chain(
        x0, chain.goal, dt, n_steps, eps_goal, v_max or 0.0, *_packed(chain), anchors, timers
    )
    times = dt * np.arange(n)
    return SimulationResult(
        times,
        pos[:n].copy(),
        vel[:n].copy(),
        bool(ok),
        float(times[-1]) if ok else None,
        modes[:n].copy(),
        [int(m) for m in trace[:n_trace]],
    )


def mode_name(mode: int) -> str:
    return f"s{mode // 2 + 1}" + ("'" if mode % 2 else "")


def trace_is_monotone(trace: Sequence[int]) -> bool:
    """Entered modes advance one step at a time from the first mode."""
    return len(trace) > 0 and trace[0] == 0 and all(b == a + 1 for a, b in zip(trace, trace[1:]))


# ---------------------------------------------------------------------------
# convergence criteria


@dataclass
class CriterionResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class GasReport:
    criteria: list[CriterionResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "criteria": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.criteria],
        }


def _entry_probes(chain: DSChain, i: int) -> np.ndarray:
    """Where mode ``s_i`` can begin: the chain start (or first anchor) for
    the first policy, the previous triplet's middle and last means after."""
    a = chain.anchors[i]
    probes = [a[0]]
    if i == 0 and chain.start is not None:
        probes.append(chain.start)
    if i > 0:
        probes.extend(chain.anchors[i - 1][1:])
    return np.array(probes, dtype=float)


def verify_gas_criteria(
    chain: DSChain,
    dt: float = DEFAULT_DT,
    t_max: float = DEFAULT_T_MAX,
    v_max: float | None = None,
    tolerance: float = 1e-10,
) -> GasReport:
    """Check (1) every policy is stable, hence bounded on bounded sets;
    (2) every nominal policy is stable at its triplet's last anchor and
    fires its trigger from its entry region within ``t_max``; (3) every
    timer is finite and non-negative; (4) the final policy is stable at the
    goal."""
    reports = [verify_stability(p, tolerance) for p in chain.policies]
    bad = [i for i, r in enumerate(reports) if not r.passed]
    c1 = CriterionResult("bounded", not bad, f"unstable policies: {bad}" if bad else "all policies stable")

    n_steps = int(math.floor(t_max / dt + 1e-9))
    problems = []
    for i in range(chain.n_policies - 1):
        p = chain.policies[i]
        a, b, c = (np.ascontiguousarray(v) for v in chain.anchors[i])
        if not np.allclose(p.attractor, c, atol=1e-9, rtol=0):
            problems.append(f"f{i + 1} attractor differs from its trigger anchor")
            continue
        if not reports[i].passed:
            problems.append(f"f{i + 1} unstable")
            continue
        pack = policy_pack(p)
        for x0 in _entry_probes(chain, i):
            steps = _kernels.steps_until_trigger(
                np.ascontiguousarray(x0), a, b, c, dt, n_steps, v_max or 0.0, *pack
            )
            if steps < 0:
                problems.append(f"trigger {i + 1} not fired from {np.round(x0, 6).tolist()}")
    c2 = CriterionResult("triggers fire", not problems, "; ".join(problems) or "all triggers reachable")

    t = chain.timers
    c3_ok = bool(np.all(np.isfinite(t)) and np.all(t >= 0))
    c3 = CriterionResult("finite timers", c3_ok, f"timers {t.tolist()}")

    last = chain.policies[-1]
    at_goal = np.allclose(last.attractor, chain.goal, atol=1e-9, rtol=0)
    c4 = CriterionResult(
        "final policy GAS",
        bool(at_goal and reports[-1].passed),
        f"attractor at goal: {at_goal}, stable: {reports[-1].passed}",
    )
    return GasReport([c1, c2, c3, c4])


__all__ = [
    "ChainExecState",
    "CriterionResult",
    "DSChain",
    "DEFAULT_ALPHA",
    "GasReport",
    "SegmentTable",
    "build_chain",
    "check_window",
    "mode_name",
    "precompute_segment_table",
    "realizable_triplets",
    "segment_data",
    "simulate_chain",
    "step_chain",
    "timer_duration",
    "trace_is_monotone",
    "transition_velocity",
    "trigger_fired",
    "verify_gas_criteria",
]
