"""Evaluation metrics: velocity RMSE against reference data and Data
Support of a rolled-out trajectory."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .chaining import DSChain
from .datasets import DemonstrationSet
from .errors import DegenerateSupportStats, EmptySelection
from .lpvds import StablePolicy


def chain_point_policies(chain: DSChain, vertex_labels: np.ndarray) -> list[tuple[int, ...]]:
    """Policy indices whose equal mix evaluates each reference point.

    With path vertices ``v_1 .. v_M``: points of ``v_1`` use ``f_1``, those of
    the last vertex use ``f*``, and a middle vertex ``v_j`` (where the chain
    hands over from ``f_{j-1}`` to ``f_j``) uses both. Paths of one or two
    vertices use ``f*`` throughout.
    """
    M = len(chain.vertices)
    last = chain.n_policies - 1
    off = 1 if chain.initial else 0
    out = []
    for j in np.asarray(vertex_labels, dtype=int):
        if M <= 2 or j == M - 1:
            out.append((last,))
        elif j == 0:
            out.append((off,))
        else:
            out.append((off + j - 1, off + j))
    return out


def velocity_rmse(
    target: StablePolicy | DSChain,
    positions: np.ndarray,
    velocities: np.ndarray,
    vertex_labels: np.ndarray | None = None,
) -> float:
    """Root of the mean squared velocity error over reference points.

    For a chain, ``vertex_labels`` gives each point's position in the chain's
    vertex path (see :func:`chain_point_policies`).
    """
    X = np.atleast_2d(np.asarray(positions, dtype=float))
    V = np.atleast_2d(np.asarray(velocities, dtype=float))
    if X.shape[0] == 0:
        raise EmptySelection("no reference points")
    if isinstance(target, StablePolicy):
        pred = target(X)
    else:
        if vertex_labels is None:
            raise ValueError("chains need per-point vertex labels")
        assign = chain_point_policies(target, vertex_labels)
        pred = np.empty_like(X)
        groups: dict[tuple[int, ...], list[int]] = {}
        for i, a in enumerate(assign):
            groups.setdefault(a, []).append(i)
        for a, idx in groups.items():
            pred[idx] = np.mean([target.policies[k](X[idx]) for k in a], axis=0)
    return float(np.sqrt(np.mean(np.sum((pred - V) ** 2, axis=1))))


@dataclass(frozen=True)
class SupportStats:
    """Mean and standard deviation of inter-trajectory nearest-neighbour
    distances over all reference points."""

    mu: float
    sigma: float

    @property
    def degenerate(self) -> bool:
        return not self.sigma > 0


@dataclass(frozen=True, eq=False)
class SupportModel:
    stats: SupportStats
    tree: cKDTree

    def score_points(self, positions: np.ndarray) -> np.ndarray:
        d, _ = self.tree.query(np.atleast_2d(positions))
        if self.stats.degenerate:
            return (d < self.stats.mu).astype(float)
        z = (d - self.stats.mu) / self.stats.sigma
        return np.where(d < self.stats.mu, 1.0, np.exp(-0.5 * z * z))


def support_model(dataset: DemonstrationSet, strict: bool = False) -> SupportModel:
    """Nearest-neighbour statistics where each reference point's neighbour
    must belong to a different trajectory (of any demonstration).

    A zero spread falls back to hard thresholding at the mean with a
    warning, or raises :class:`DegenerateSupportStats` when ``strict``.
    """
    trajs = [t.positions for demo in dataset for t in demo.trajectories]
    if len(trajs) < 2:
        raise DegenerateSupportStats("need at least two trajectories for inter-trajectory distances")
    labels = np.concatenate([np.full(len(p), i) for i, p in enumerate(trajs)])
    X = np.vstack(trajs)
    nn = np.empty(X.shape[0])
    for i in range(len(trajs)):
        own = labels == i
        nn[own], _ = cKDTree(X[~own]).query(X[own])
    stats = SupportStats(float(nn.mean()), float(nn.std()))
    if stats.degenerate:
        if strict:
            raise DegenerateSupportStats("inter-trajectory distances have zero spread")
        warnings.warn("inter-trajectory distances have zero spread; using hard thresholding", RuntimeWarning)
    return SupportModel(stats, cKDTree(X))


def data_support(trajectory: np.ndarray, dataset: DemonstrationSet | SupportModel) -> float:
    """Mean per-point score: 1 within the mean nearest-neighbour distance,
    a Gaussian tail in the excess distance beyond it."""
    model = dataset if isinstance(dataset, SupportModel) else support_model(dataset)
    P = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if P.shape[0] == 0:
        raise EmptySelection("empty trajectory")
    return float(np.mean(model.score_points(P)))


__all__ = [
    "SupportModel",
    "SupportStats",
    "chain_point_policies",
    "data_support",
    "support_model",
    "velocity_rmse",
]
