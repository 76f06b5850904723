"""Demonstration stitching: one time-invariant stable policy from the data of
a graph-selected vertex set."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .datasets import DemonstrationSet
from .errors import EmptySelection
from .gmm import MixtureFit, min_fit_points, mixture_from_clusters
from .graph import GraphVertex
from .lpvds import DEFAULT_MARGIN, FitReport, StablePolicy, fit_ds_given_gmm, fit_lpvds

DEFAULT_K_MAX = 10


class Reuse(str, Enum):
    """``ALL`` refits mixture and dynamics; ``DS`` keeps the selected
    Gaussians and refits only the dynamics and Lyapunov matrix."""

    ALL = "all"
    DS = "ds"


class Method(str, Enum):
    SP = "sp"
    SPT = "spt"


@dataclass(frozen=True)
class StitchRequest:
    selection: tuple[GraphVertex, ...]
    goal: np.ndarray
    reuse: Reuse = Reuse.ALL
    method: Method = Method.SP

    def __post_init__(self) -> None:
        object.__setattr__(self, "selection", tuple(self.selection))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).reshape(-1))
        if not np.all(np.isfinite(self.goal)):
            raise ValueError("goal must be finite")


@dataclass(frozen=True, eq=False)
class FilteredData:
    positions: np.ndarray
    velocities: np.ndarray
    vertex_labels: np.ndarray  # position within the selection
    trajectory_labels: np.ndarray  # unique per (demo, trajectory)

    def __len__(self) -> int:
        return self.positions.shape[0]


def collect_filtered_data(selection: Sequence[GraphVertex], dataset: DemonstrationSet) -> FilteredData:
    """Union of the selected vertices' clusters; velocities of reversed
    vertices are negated."""
    if len(selection) == 0:
        raise EmptySelection("vertex selection is empty")
    pos, vel, vlab, tlab = [], [], [], []
    traj_ids: dict[tuple[str, int], int] = {}
    for i, v in enumerate(selection):
        demo = dataset[v.demo_id]
        X, V, T = demo.positions, demo.velocities, demo.trajectory_labels
        idx = np.asarray(v.cluster, dtype=int)
        pos.append(X[idx])
        vel.append(-V[idx] if v.reversed else V[idx])
        vlab.append(np.full(idx.size, i))
        tlab.append([traj_ids.setdefault((v.demo_id, int(t)), len(traj_ids)) for t in T[idx]])
    out = FilteredData(
        np.vstack(pos), np.vstack(vel), np.concatenate(vlab), np.concatenate(tlab).astype(int)
    )
    if len(out) == 0:
        raise EmptySelection("selected vertices carry no data points")
    return out


def selection_mixture(selection: Sequence[GraphVertex], data: FilteredData) -> MixtureFit:
    return mixture_from_clusters([v.component for v in selection], data.vertex_labels)


def stitch_no_reuse(
    req: StitchRequest,
    dataset: DemonstrationSet,
    seed: int,
    k_max: int = DEFAULT_K_MAX,
    margin_rel: float = DEFAULT_MARGIN,
) -> tuple[StablePolicy, FitReport]:
    data = collect_filtered_data(req.selection, dataset)
    if len(data) < min_fit_points(data.positions.shape[1]):
        # too few points to refit a mixture; keep the selected Gaussians
        return stitch_reuse_gaussians(req, dataset, margin_rel)
    n_restarts = 5
    if req.method is Method.SPT:
        # the tree already reflects component granularity; one EM start
        # per K keeps the long BIC sweep affordable
        k_max = len(req.selection)
        n_restarts = 1
    policy, _, report = fit_lpvds(
        data.positions,
        data.velocities,
        req.goal,
        k_max,
        seed,
        trajectory_labels=data.trajectory_labels,
        margin_rel=margin_rel,
        speed=dataset.mean_speed(),
        n_restarts=n_restarts,
    )
    return policy, report


def stitch_reuse_gaussians(
    req: StitchRequest, dataset: DemonstrationSet, margin_rel: float = DEFAULT_MARGIN
) -> tuple[StablePolicy, FitReport]:
    data = collect_filtered_data(req.selection, dataset)
    mixture = selection_mixture(req.selection, data)
    return fit_ds_given_gmm(
        mixture, data.positions, data.velocities, req.goal, margin_rel=margin_rel, speed=dataset.mean_speed()
    )


def stitch(
    req: StitchRequest,
    dataset: DemonstrationSet,
    seed: int = 0,
    k_max: int = DEFAULT_K_MAX,
    margin_rel: float = DEFAULT_MARGIN,
) -> tuple[StablePolicy, FitReport]:
    if req.reuse is Reuse.DS:
        return stitch_reuse_gaussians(req, dataset, margin_rel)
    return stitch_no_reuse(req, dataset, seed, k_max, margin_rel)


def provenance(req: StitchRequest) -> dict:
    return {
        "method": req.method.value,
        "reuse": req.reuse.value,
        "goal": req.goal.tolist(),
        "selection": [{"key": v.key, "reversed": v.reversed} for v in req.selection],
    }
