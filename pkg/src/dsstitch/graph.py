"""The Gaussian Graph: mixture components of per-demonstration policies as
vertices, feasible component-to-component flow as weighted directed edges.

Vertex ids are list positions. An :class:`EndpointAttachment` adds two
virtual vertices, ``start`` (id ``n``) and ``goal`` (id ``n + 1``).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .datasets import DemonstrationSet
from .errors import NoGoalEdges, NoPath
from .gmm import GaussianComponent, MixtureFit, bhattacharyya_coefficient, gaussian_pdf
from .lpvds import StablePolicy

PDF_FLOOR = 1e-12
DISTANCE_FLOOR = 1e-9


@dataclass(frozen=True)
class GraphParams:
    eta_bc: float = 0.05
    eta_dist: float = 2.0
    eta_dir: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta_bc < 1.0:
            raise ValueError("eta_bc must lie in [0, 1)")
        if self.eta_dist < 0 or self.eta_dir < 0:
            raise ValueError("eta_dist and eta_dir must be non-negative")


@dataclass(frozen=True, eq=False)
class GraphVertex:
    component: GaussianComponent
    dynamics: np.ndarray
    direction: np.ndarray
    demo_id: str
    index: int
    reversed: bool
    cluster: np.ndarray
    attractor: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.component.mean

    @property
    def key(self) -> str:
        return f"{self.demo_id}:{self.index}" + ("'" if self.reversed else "")

    @property
    def pair_key(self) -> tuple[str, int]:
        return (self.demo_id, self.index)

    def reversed_copy(self) -> "GraphVertex":
        return GraphVertex(
            self.component,
            -self.dynamics,
            -self.direction,
            self.demo_id,
            self.index,
            not self.reversed,
            self.cluster,
            self.attractor,
        )

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "demo": self.demo_id,
            "index": self.index,
            "reversed": self.reversed,
            "component": self.component.to_dict(),
            "dynamics": self.dynamics.tolist(),
            "direction": self.direction.tolist(),
            "attractor": self.attractor.tolist(),
            "cluster": self.cluster.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "GraphVertex":
        return cls(
            GaussianComponent.from_dict(raw["component"]),
            np.array(raw["dynamics"], dtype=float),
            np.array(raw["direction"], dtype=float),
            raw["demo"],
            int(raw["index"]),
            bool(raw["reversed"]),
            np.array(raw["cluster"], dtype=int),
            np.array(raw["attractor"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class GaussianGraph:
    vertices: tuple[GraphVertex, ...]
    edges: dict[int, dict[int, float]]
    params: GraphParams = field(default_factory=GraphParams)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return sum(len(out) for out in self.edges.values())

    def edge_list(self) -> list[tuple[int, int, float]]:
        return [(i, j, w) for i in sorted(self.edges) for j, w in sorted(self.edges[i].items())]

    def has_edge(self, i: int, j: int) -> bool:
        return j in self.edges.get(i, {})

    def index_of(self, key: str) -> int:
        for i, v in enumerate(self.vertices):
            if v.key == key:
                return i
        raise KeyError(key)

    def max_out_degree(self) -> int:
        return max((len(out) for out in self.edges.values()), default=0)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "params": {"eta_bc": self.params.eta_bc, "eta_dist": self.params.eta_dist, "eta_dir": self.params.eta_dir},
            "vertices": [v.to_dict() for v in self.vertices],
            "edges": [[i, j, w] for i, j, w in self.edge_list()],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "GaussianGraph":
        vertices = tuple(GraphVertex.from_dict(v) for v in raw["vertices"])
        edges: dict[int, dict[int, float]] = {i: {} for i in range(len(vertices))}
        for i, j, w in raw["edges"]:
            edges[int(i)][int(j)] = float(w)
        return cls(vertices, edges, GraphParams(**raw["params"]))


# ---------------------------------------------------------------------------
# edge geometry


def cos_angle(direction: np.ndarray, delta: np.ndarray) -> float:
    """Cosine of the angle between ``direction`` and ``delta``.

    A zero direction gives 0 (no edge); a zero ``delta`` means the target is
    already reached and counts as perfectly aligned.
    """
    nd = float(np.linalg.norm(direction))
    if nd == 0.0:
        return 0.0
    nl = float(np.linalg.norm(delta))
    if nl < DISTANCE_FLOOR:
        return 1.0
    return float(direction @ delta) / (nd * nl)


def edge_weight(distance: float, cos: float, params: GraphParams) -> float:
    """``distance ** eta_dist / cos ** eta_dir``, distance floored."""
    return max(distance, DISTANCE_FLOOR) ** params.eta_dist / cos**params.eta_dir


def _compute_edges(vertices: Sequence[GraphVertex], params: GraphParams) -> dict[int, dict[int, float]]:
    n = len(vertices)
    edges: dict[int, dict[int, float]] = {i: {} for i in range(n)}
    bc_cache: dict[tuple[int, int], float] = {}
    for i, vi in enumerate(vertices):
        for j, vj in enumerate(vertices):
            if i == j or vi.pair_key == vj.pair_key:
                # a vertex and its own reversal share a mean; linking them
                # would let paths flip direction for free
                continue
            delta = vj.mean - vi.mean
            c = cos_angle(vi.direction, delta)
            if not c > 0.0:
                continue
            key = (min(i, j), max(i, j))
            if key not in bc_cache:
                bc_cache[key] = bhattacharyya_coefficient(vi.component, vj.component)
            if not bc_cache[key] > params.eta_bc:
                continue
            edges[i][j] = edge_weight(float(np.linalg.norm(delta)), c, params)
    return edges


def build_graph(
    policies: Iterable[tuple[StablePolicy, MixtureFit, str]],
    params: GraphParams = GraphParams(),
) -> GaussianGraph:
    """One vertex per mixture component of every policy, direction
    ``A_k (mu_k - x*)``; edges where the direction points toward the other
    component and the Bhattacharyya overlap exceeds ``eta_bc``."""
    vertices = []
    for policy, mixture, demo_id in policies:
        for k, (comp, A) in enumerate(zip(policy.components, policy.dynamics)):
            vertices.append(
                GraphVertex(
                    comp,
                    np.array(A),
                    A @ (comp.mean - policy.attractor),
                    demo_id,
                    k,
                    False,
                    mixture.cluster(k),
                    policy.attractor,
                )
            )
    return GaussianGraph(tuple(vertices), _compute_edges(vertices, params), params)


def expand_bidirectional(graph: GaussianGraph, dataset: DemonstrationSet) -> GaussianGraph:
    """Add a reversed counterpart (negated dynamics and direction) for every
    vertex of a bidirectional demonstration, then recompute all edges."""
    flags = {d.id: d.bidirectional for d in dataset}
    extra = [v.reversed_copy() for v in graph.vertices if not v.reversed and flags.get(v.demo_id, False)]
    if not extra:
        return graph
    vertices = tuple(graph.vertices) + tuple(extra)
    return GaussianGraph(vertices, _compute_edges(vertices, graph.params), graph.params)


# ---------------------------------------------------------------------------
# shortest paths


def dijkstra(adjacency: dict[int, dict[int, float]], source: int) -> tuple[dict[int, float], dict[int, int]]:
    """Single-source shortest paths.

    Ties are broken toward the smaller vertex id, both in the settling order
    and in the choice of predecessor.
    """
    dist = {source: 0.0}
    pred: dict[int, int] = {}
    done = set()
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in sorted(adjacency.get(u, {}).items()):
            if v in done:
                continue
            nd = d + w
            old = dist.get(v)
            if old is None or nd < old or (nd == old and u < pred.get(v, u + 1)):
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, pred


def all_pairs_distances(graph: GaussianGraph) -> np.ndarray:
    n = graph.n_vertices
    out = np.full((n, n), np.inf)
    for s in range(n):
        dist, _ = dijkstra(graph.edges, s)
        for v, d in dist.items():
            out[s, v] = d
    return out


def reduce_graph(graph: GaussianGraph, rtol: float = 1e-12) -> GaussianGraph:
    """Drop every edge for which a strictly shorter detour exists.

    Such edges lie on no shortest path, so all pairwise distances survive.
    """
    dist = all_pairs_distances(graph)
    edges = {
        i: {j: w for j, w in out.items() if not dist[i, j] < w * (1.0 - rtol)}
        for i, out in graph.edges.items()
    }
    return GaussianGraph(graph.vertices, edges, graph.params)


@dataclass(frozen=True, eq=False)
class EndpointAttachment:
    graph: GaussianGraph
    goal: np.ndarray
    goal_edges: dict[int, float]
    start: np.ndarray | None = None
    start_edges: dict[int, float] = field(default_factory=dict)

    @property
    def start_id(self) -> int:
        return self.graph.n_vertices

    @property
    def goal_id(self) -> int:
        return self.graph.n_vertices + 1

    def adjacency(self) -> dict[int, dict[int, float]]:
        adj = {i: dict(out) for i, out in self.graph.edges.items()}
        for j, w in self.goal_edges.items():
            adj.setdefault(j, {})[self.goal_id] = w
        if self.start is not None:
            adj[self.start_id] = dict(self.start_edges)
        return adj


def attach_endpoints(graph: GaussianGraph, start: np.ndarray | None, goal: np.ndarray) -> EndpointAttachment:
    """Connect a goal vertex (incoming edges only) and optionally a start
    vertex (outgoing edges only) to the graph.

    Endpoint edge weights are the usual edge weight divided by the
    component's density at the respective endpoint, clamped at
    ``PDF_FLOOR``.
    """
    goal = np.asarray(goal, dtype=float).reshape(-1)
    if not np.all(np.isfinite(goal)):
        raise ValueError("goal must be finite")
    params = graph.params
    goal_edges = {}
    for j, v in enumerate(graph.vertices):
        delta = goal - v.mean
        c = cos_angle(v.direction, delta)
        if c > 0.0:
            w = edge_weight(float(np.linalg.norm(delta)), c, params)
            goal_edges[j] = w / max(gaussian_pdf(v.component, goal), PDF_FLOOR)
    if not goal_edges:
        raise NoGoalEdges("no vertex direction points toward the goal")
    start_edges = {}
    if start is not None:
        start = np.asarray(start, dtype=float).reshape(-1)
        if not np.all(np.isfinite(start)):
            raise ValueError("start must be finite")
        for j, v in enumerate(graph.vertices):
            delta = v.mean - start
            c = cos_angle(v.direction, delta)
            if c > 0.0:
                w = edge_weight(float(np.linalg.norm(delta)), c, params)
                start_edges[j] = w / max(gaussian_pdf(v.component, start), PDF_FLOOR)
    return EndpointAttachment(graph, goal, goal_edges, start, start_edges)


def shortest_path_with_cost(att: EndpointAttachment) -> tuple[list[int], float]:
    if att.start is None:
        raise ValueError("shortest_path needs a start endpoint")
    dist, pred = dijkstra(att.adjacency(), att.start_id)
    if att.goal_id not in dist:
        raise NoPath("goal is not reachable from the start")
    path = [att.goal_id]
    while path[-1] != att.start_id:
        path.append(pred[path[-1]])
    return path[::-1][1:-1], dist[att.goal_id]


def shortest_path(att: EndpointAttachment) -> list[int]:
    """Interior vertices of the cheapest start-to-goal path."""
    return shortest_path_with_cost(att)[0]


def window_safe_path_with_cost(att: EndpointAttachment) -> tuple[list[int], float]:
    """Cheapest start-to-goal path in which no three consecutive interior
    vertices contain a vertex together with its reversal.

    Dijkstra over (previous, current) vertex states; ties are broken toward
    the lexicographically smaller state.
    """
    if att.start is None:
        raise ValueError("shortest_path needs a start endpoint")
    adj = att.adjacency()
    n = att.graph.n_vertices
    pair = [v.pair_key for v in att.graph.vertices]
    source = (-1, att.start_id)
    dist = {source: 0.0}
    pred: dict[tuple[int, int], tuple[int, int]] = {}
    done = set()
    heap = [(0.0, source)]
    while heap:
        d, state = heapq.heappop(heap)
        if state in done:
            continue
        done.add(state)
        prev, u = state
        if u == att.goal_id:
            path = [u]
            while state != source:
                state = pred[state]
                path.append(state[1])
            return path[::-1][1:-1], d
        for v, w in sorted(adj.get(u, {}).items()):
            if 0 <= prev < n and v < n and (v == prev or pair[v] == pair[prev]):
                continue
            nxt = (u, v)
            if nxt in done:
                continue
            nd = d + w
            old = dist.get(nxt)
            if old is None or nd < old or (nd == old and state < pred[nxt]):
                dist[nxt] = nd
                pred[nxt] = state
                heapq.heappush(heap, (nd, nxt))
    raise NoPath("goal is not reachable from the start")


def window_safe_path(att: EndpointAttachment) -> list[int]:
    return window_safe_path_with_cost(att)[0]


def distances_to_goal(att: EndpointAttachment) -> dict[int, float]:
    reverse: dict[int, dict[int, float]] = {}
    for u, out in att.adjacency().items():
        if u == att.start_id:
            continue
        for v, w in out.items():
            reverse.setdefault(v, {})[u] = w
    dist, _ = dijkstra(reverse, att.goal_id)
    dist.pop(att.goal_id)
    return dist


def shortest_path_tree(att: EndpointAttachment) -> list[int]:
    """All vertices that can reach the goal, keeping only the closer member
    of each forward/reversed pair (the forward one on ties)."""
    if not att.goal_edges:
        raise NoGoalEdges("no vertex direction points toward the goal")
    dist = distances_to_goal(att)
    keep = set(dist)
    by_pair: dict[tuple[str, int], list[int]] = {}
    for i in dist:
        by_pair.setdefault(att.graph.vertices[i].pair_key, []).append(i)
    for members in by_pair.values():
        if len(members) < 2:
            continue
        members.sort(key=lambda i: (dist[i], att.graph.vertices[i].reversed))
        for i in members[1:]:
            keep.discard(i)
    return sorted(keep)
