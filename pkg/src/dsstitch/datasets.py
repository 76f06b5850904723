"""Demonstration data: containers, the JSON dataset format, velocity
reconstruction and built-in synthetic 2D scenarios."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import uniform_filter1d

from .errors import (
    AttractorInconsistent,
    DimensionMismatch,
    EmptyDemonstration,
    ParseError,
    TooFewPoints,
    UnknownScenario,
)

FORMAT_VERSION = 1
ATTRACTOR_TOLERANCE = 0.05


class ReferencePoint(NamedTuple):
    position: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One reference trajectory, sampled row-major: ``positions[i]`` at
    ``timestamps[i]``."""

    positions: np.ndarray
    velocities: np.ndarray
    timestamps: np.ndarray
    dt: float | None = None
    velocities_estimated: bool = False

    def __post_init__(self) -> None:
        for name in ("positions", "velocities", "timestamps"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.velocities_estimated == other.velocities_estimated
            and _arrays_equal(self.positions, other.positions)
            and _arrays_equal(self.velocities, other.velocities)
            and _arrays_equal(self.timestamps, other.timestamps)
        )


@dataclass(frozen=True, eq=False)
class Demonstration:
    id: str
    trajectories: tuple[Trajectory, ...]
    attractor: np.ndarray
    bidirectional: bool = False

    def __post_init__(self) -> None:
        att = np.array(self.attractor, dtype=float)
        att.setflags(write=False)
        object.__setattr__(self, "attractor", att)
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    @property
    def dimension(self) -> int:
        return self.attractor.shape[0]

    @property
    def positions(self) -> np.ndarray:
        """All reference positions stacked; row order defines point indices."""
        return np.vstack([t.positions for t in self.trajectories])

    @property
    def velocities(self) -> np.ndarray:
        return np.vstack([t.velocities for t in self.trajectories])

    @property
    def trajectory_labels(self) -> np.ndarray:
        return np.concatenate(
            [np.full(len(t), i) for i, t in enumerate(self.trajectories)]
        )

    @property
    def start(self) -> np.ndarray:
        """Mean initial position over the trajectories."""
        return np.mean([t.positions[0] for t in self.trajectories], axis=0)

    def points(self) -> Iterator[ReferencePoint]:
        for t in self.trajectories:
            for x, v in zip(t.positions, t.velocities):
                yield ReferencePoint(x, v)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Demonstration):
            return NotImplemented
        return (
            self.id == other.id
            and self.bidirectional == other.bidirectional
            and _arrays_equal(self.attractor, other.attractor)
            and self.trajectories == other.trajectories
        )


@dataclass(frozen=True, eq=False)
class DemonstrationSet:
    demonstrations: tuple[Demonstration, ...]
    dimension: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "demonstrations", tuple(self.demonstrations))
        object.__setattr__(self, "_index", {d.id: d for d in self.demonstrations})

    def __getitem__(self, demo_id: str) -> Demonstration:
        return self._index[demo_id]

    def __iter__(self) -> Iterator[Demonstration]:
        return iter(self.demonstrations)

    def __len__(self) -> int:
        return len(self.demonstrations)

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.demonstrations]

    @property
    def positions(self) -> np.ndarray:
        return np.vstack([d.positions for d in self.demonstrations])

    @property
    def velocities(self) -> np.ndarray:
        return np.vstack([d.velocities for d in self.demonstrations])

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        pos = self.positions
        return pos.min(axis=0), pos.max(axis=0)

    def diagonal(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def mean_speed(self) -> float:
        return float(np.mean(np.linalg.norm(self.velocities, axis=1)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DemonstrationSet):
            return NotImplemented
        return self.dimension == other.dimension and self.demonstrations == other.demonstrations


def _arrays_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.array_equal(a, b))


# ---------------------------------------------------------------------------
# validation


def validate_demonstration(demo: Demonstration, tolerance: float = ATTRACTOR_TOLERANCE) -> None:
    """Raise if ``demo`` violates the container invariants.

    ``tolerance`` is the allowed endpoint spread around the attractor as a
    fraction of the demonstration's bounding-box diagonal.
    """
    if not demo.trajectories:
        raise EmptyDemonstration(f"demonstration {demo.id!r} has no trajectories")
    d = demo.dimension
    if d < 2:
        raise DimensionMismatch(f"demonstration {demo.id!r}: dimension must be >= 2")
    for i, traj in enumerate(demo.trajectories):
        if traj.positions.ndim != 2 or len(traj) < 2:
            raise EmptyDemonstration(
                f"demonstration {demo.id!r}, trajectory {i}: need at least 2 points"
            )
        if traj.positions.shape[1] != d or traj.velocities.shape != traj.positions.shape:
            raise DimensionMismatch(
                f"demonstration {demo.id!r}, trajectory {i}: shape "
                f"{traj.positions.shape} / {traj.velocities.shape}, expected (n, {d})"
            )
        if traj.timestamps.shape != (len(traj),):
            raise DimensionMismatch(f"demonstration {demo.id!r}, trajectory {i}: timestamps")
        if not (np.all(np.isfinite(traj.positions)) and np.all(np.isfinite(traj.velocities))):
            raise ParseError(f"demonstration {demo.id!r}, trajectory {i}: non-finite values")
    if not np.all(np.isfinite(demo.attractor)):
        raise ParseError(f"demonstration {demo.id!r}: non-finite attractor")
    pos = demo.positions
    eps = tolerance * float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))
    for i, traj in enumerate(demo.trajectories):
        gap = float(np.linalg.norm(traj.positions[-1] - demo.attractor))
        if gap > eps:
            raise AttractorInconsistent(
                f"demonstration {demo.id!r}, trajectory {i} ends {gap:.4g} from the "
                f"attractor (tolerance {eps:.4g})"
            )


def make_demonstration_set(demos: Sequence[Demonstration]) -> DemonstrationSet:
    if not demos:
        raise EmptyDemonstration("dataset contains no demonstrations")
    dims = {d.dimension for d in demos}
    if len(dims) != 1:
        raise DimensionMismatch(f"demonstrations disagree on dimension: {sorted(dims)}")
    ids = [d.id for d in demos]
    if len(set(ids)) != len(ids):
        raise ParseError("demonstration ids must be unique")
    for demo in demos:
        validate_demonstration(demo)
    return DemonstrationSet(tuple(demos), dims.pop())


# ---------------------------------------------------------------------------
# velocities


def estimate_velocities(
    positions: np.ndarray, timestamps: np.ndarray, window: int = 1
) -> np.ndarray:
    """Finite-difference velocities: central in the interior, one-sided at
    both ends, optionally smoothed by a centred moving average of ``window``
    samples."""
    positions = np.asarray(positions, dtype=float)
    timestamps = np.asarray(timestamps, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    if positions.shape[0] < 2:
        raise TooFewPoints("need at least 2 samples to estimate velocities")
    if timestamps.shape != (positions.shape[0],):
        raise DimensionMismatch("one timestamp per position required")
    if np.any(np.diff(timestamps) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    vel = np.gradient(positions, timestamps, axis=0, edge_order=1)
    if window > 1:
        vel = uniform_filter1d(vel, size=window, axis=0, mode="nearest")
    return vel


# ---------------------------------------------------------------------------
# JSON format


def dataset_to_dict(ds: DemonstrationSet) -> dict:
    demos = []
    for demo in ds:
        trajs = []
        for t in demo.trajectories:
            entry: dict = {}
            if t.dt is not None:
                entry["dt"] = t.dt
            else:
                entry["timestamps"] = t.timestamps.tolist()
            entry["positions"] = t.positions.tolist()
            entry["velocities"] = t.velocities.tolist()
            if t.velocities_estimated:
                entry["velocities_estimated"] = True
            trajs.append(entry)
        demos.append(
            {
                "id": demo.id,
                "bidirectional": demo.bidirectional,
                "attractor": demo.attractor.tolist(),
                "trajectories": trajs,
            }
        )
    return {"version": FORMAT_VERSION, "dimension": ds.dimension, "demonstrations": demos}


def dumps_dataset(ds: DemonstrationSet) -> str:
    raw = dataset_to_dict(ds)
    raw["content_hash"] = dataset_hash(ds)
    return json.dumps(raw, indent=1) + "\n"


def save_dataset(ds: DemonstrationSet, path: str | Path) -> None:
    Path(path).write_text(dumps_dataset(ds))


def dataset_hash(ds: DemonstrationSet) -> str:
    canon = json.dumps(dataset_to_dict(ds), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _parse_trajectory(raw: dict, where: str) -> Trajectory:
    try:
        positions = np.array(raw["positions"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad or missing 'positions'") from exc
    if positions.ndim != 2:
        raise DimensionMismatch(f"{where}: positions must be a list of rows")
    n = positions.shape[0]
    if n < 2:
        raise EmptyDemonstration(f"{where}: need at least 2 points")
    dt = None
    if "timestamps" in raw:
        try:
            timestamps = np.array(raw["timestamps"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{where}: bad 'timestamps'") from exc
        if timestamps.shape != (n,):
            raise DimensionMismatch(f"{where}: {timestamps.shape[0]} timestamps for {n} points")
    elif "dt" in raw:
        dt = raw["dt"]
        if not isinstance(dt, (int, float)) or isinstance(dt, bool) or not dt > 0:
            raise ParseError(f"{where}: 'dt' must be a positive number")
        dt = float(dt)
        timestamps = dt * np.arange(n)
    else:
        raise ParseError(f"{where}: either 'dt' or 'timestamps' is required")
    estimated = bool(raw.get("velocities_estimated", False))
    if raw.get("velocities") is not None:
        try:
            velocities = np.array(raw["velocities"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{where}: bad 'velocities'") from exc
        if velocities.shape != positions.shape:
            raise DimensionMismatch(
                f"{where}: velocities {velocities.shape} vs positions {positions.shape}"
            )
    else:
        try:
            velocities = estimate_velocities(positions, timestamps)
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from exc
        estimated = True
    return Trajectory(positions, velocities, timestamps, dt=dt, velocities_estimated=estimated)


def dataset_from_dict(raw: dict) -> DemonstrationSet:
    if not isinstance(raw, dict):
        raise ParseError("dataset root must be an object")
    if raw.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported dataset version {raw.get('version')!r}")
    dim = raw.get("dimension")
    if not isinstance(dim, int) or dim < 2:
        raise ParseError("'dimension' must be an integer >= 2")
    entries = raw.get("demonstrations")
    if not isinstance(entries, list) or not entries:
        raise EmptyDemonstration("'demonstrations' must be a non-empty list")
    demos = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or not isinstance(entry.get("id"), str):
            raise ParseError(f"demonstration {i}: missing string 'id'")
        where = f"demonstration {entry['id']!r}"
        raw_trajs = entry.get("trajectories")
        if not isinstance(raw_trajs, list) or not raw_trajs:
            raise EmptyDemonstration(f"{where}: no trajectories")
        trajs = [_parse_trajectory(t, f"{where}, trajectory {j}") for j, t in enumerate(raw_trajs)]
        for t in trajs:
            if t.dimension != dim:
                raise DimensionMismatch(f"{where}: points have dimension {t.dimension}, file says {dim}")
        if entry.get("attractor") is not None:
            attractor = np.array(entry["attractor"], dtype=float)
            if attractor.shape != (dim,):
                raise DimensionMismatch(f"{where}: attractor shape {attractor.shape}")
        else:
            attractor = np.mean([t.positions[-1] for t in trajs], axis=0)
        demos.append(
            Demonstration(entry["id"], tuple(trajs), attractor, bool(entry.get("bidirectional", False)))
        )
    ds = make_demonstration_set(demos)
    if ds.dimension != dim:
        raise DimensionMismatch("dimension field disagrees with data")
    return ds


def load_dataset(path: str | Path) -> DemonstrationSet:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    ds = dataset_from_dict(raw)
    stored = raw.get("content_hash")
    if stored is not None and stored != dataset_hash(ds):
        raise ParseError(f"{path}: content hash mismatch (file edited or corrupted)")
    return ds


# ---------------------------------------------------------------------------
# synthetic scenarios
#
# Workspace is roughly [0, 10]^2 (meters-like units); every demonstration is
# bidirectional so all pooled endpoints can serve as start or goal.

SCENARIOS: dict[str, list[tuple[str, list[tuple[float, float]]]]] = {
    # two corridors forming an X
    "two-crossing": [
        ("diag-up", [(1.0, 1.5), (4.0, 4.2), (6.0, 5.8), (9.0, 8.5)]),
        ("diag-down", [(1.0, 8.5), (4.0, 5.8), (6.0, 4.2), (9.0, 1.5)]),
    ],
    # two horizontal and two vertical corridors plus two diagonals, all
    # endpoints distinct
    "six-network": [
        ("south", [(0.5, 2.0), (3.5, 2.2), (6.5, 1.8), (9.5, 2.0)]),
        ("north", [(9.5, 8.0), (6.5, 8.2), (3.5, 7.8), (0.5, 8.0)]),
        ("west", [(2.5, 9.5), (2.3, 6.5), (2.7, 3.5), (2.5, 0.5)]),
        ("east", [(7.5, 0.5), (7.7, 3.5), (7.3, 6.5), (7.5, 9.5)]),
        ("rise", [(4.0, 0.8), (4.6, 3.4), (5.4, 6.6), (6.0, 9.2)]),
        ("ridge", [(0.8, 5.2), (3.6, 4.6), (6.4, 5.4), (9.2, 4.8)]),
    ],
    # S-shaped corridors whose joints only connect when one is reversed
    "s-curves": [
        ("s-left", [(1.0, 1.0), (2.5, 3.5), (1.5, 6.0), (3.0, 8.5)]),
        ("s-mid", [(5.5, 9.0), (4.0, 7.0), (5.5, 4.5), (4.0, 2.0)]),
        ("s-right", [(9.0, 1.0), (7.5, 3.5), (8.5, 6.0), (7.0, 9.0)]),
    ],
}


def _corridor_trajectories(
    waypoints: np.ndarray,
    rng: np.random.Generator,
    n_traj: int,
    n_points: int,
    duration: float,
    spread: float,
    noise: float,
) -> list[Trajectory]:
    seg = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    knots = np.concatenate([[0.0], np.cumsum(seg)])
    spline = CubicSpline(knots / knots[-1], waypoints, bc_type="natural")
    deriv = spline.derivative()
    tau = np.linspace(0.0, 1.0, n_points)
    # decelerating progress profile: speed falls linearly to zero at the goal
    s = 1.0 - (1.0 - tau) ** 2
    ds_dt = 2.0 * (1.0 - tau) / duration
    base = spline(s)
    tangent = deriv(s)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    # the lateral offset's own rate of change is ignored in the velocity
    # model; it fades quadratically so the endpoint error stays at the noise level
    fade = (1.0 - s) ** 2
    dt = duration / (n_points - 1)
    timestamps = dt * np.arange(n_points)
    trajs = []
    offsets = np.linspace(-spread, spread, n_traj) + rng.normal(0.0, 0.15 * spread, n_traj)
    for off in offsets:
        pos = base + off * fade[:, None] * normal
        vel = tangent * ds_dt[:, None]
        pos = pos + rng.normal(0.0, noise, pos.shape)
        trajs.append(Trajectory(pos, vel, timestamps, dt=dt))
    return trajs


def generate_synthetic_2d(
    scenario: str,
    seed: int,
    noise: float = 0.02,
    n_points: int = 60,
    spread: float = 0.25,
) -> DemonstrationSet:
    """Build one of the named 2D scenarios (see ``SCENARIOS``).

    Output is a pure function of the arguments.
    """
    if scenario not in SCENARIOS:
        raise UnknownScenario(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    rng = np.random.default_rng(seed)
    demos = []
    for i, (name, waypoints) in enumerate(SCENARIOS[scenario]):
        wp = np.array(waypoints, dtype=float)
        n_traj = 2 + int(rng.integers(0, 2))
        length = float(np.sum(np.linalg.norm(np.diff(wp, axis=0), axis=1)))
        trajs = _corridor_trajectories(
            wp, rng, n_traj, n_points, duration=length / 1.0, spread=spread, noise=noise
        )
        demos.append(Demonstration(name, tuple(trajs), wp[-1].copy(), bidirectional=True))
    return make_demonstration_set(demos)
