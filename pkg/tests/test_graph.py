import itertools

import numpy as np
import pytest

from dsstitch.errors import NoGoalEdges, NoPath
from dsstitch.gmm import GaussianComponent
from dsstitch.graph import (
    GaussianGraph,
    GraphParams,
    GraphVertex,
    all_pairs_distances,
    attach_endpoints,
    cos_angle,
    dijkstra,
    edge_weight,
    reduce_graph,
    shortest_path_tree,
    shortest_path_with_cost,
    window_safe_path_with_cost,
)


def test_edge_weight_anchor():
    assert edge_weight(2.0, 1.0, GraphParams(0.05, 2.0, 1.0)) == 4.0


def test_cos_angle_conventions():
    assert cos_angle(np.zeros(2), np.array([1.0, 0.0])) == 0.0
    assert cos_angle(np.array([1.0, 0.0]), np.zeros(2)) == 1.0
    assert cos_angle(np.array([1.0, 1.0]), np.array([0.0, 2.0])) == pytest.approx(np.sqrt(0.5))


def random_adjacency(rng, n, p=0.4):
    return {i: {j: float(rng.uniform(0.1, 5.0)) for j in range(n) if j != i and rng.random() < p} for i in range(n)}


def brute_force_distance(adj, s, t):
    n = len(adj)
    best = np.inf
    others = [v for v in range(n) if v not in (s, t)]
    for r in range(len(others) + 1):
        for mid in itertools.permutations(others, r):
            path = (s, *mid, t)
            w = 0.0
            for a, b in zip(path, path[1:]):
                if b not in adj[a]:
                    break
                w += adj[a][b]
            else:
                best = min(best, w)
    return best


def test_dijkstra_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        adj = random_adjacency(rng, n)
        s, t = (int(v) for v in rng.choice(n, 2, replace=False))
        dist, _ = dijkstra(adj, s)
        expected = brute_force_distance(adj, s, t)
        if np.isinf(expected):
            assert t not in dist
        else:
            assert dist[t] == pytest.approx(expected, rel=1e-12)


def make_vertex(mean, direction, demo="d", index=0, reversed_=False):
    comp = GaussianComponent(1.0, np.asarray(mean, float), np.eye(2))
    return GraphVertex(
        comp, -np.eye(2), np.asarray(direction, float), demo, index, reversed_, np.arange(1), np.zeros(2)
    )


def random_graph(rng, n):
    vertices = tuple(make_vertex(rng.uniform(0, 5, 2), rng.normal(size=2), "d", i) for i in range(n))
    return GaussianGraph(vertices, random_adjacency(rng, n, 0.5), GraphParams())


def test_reduce_preserves_all_pairs_distances():
    rng = np.random.default_rng(1)
    for _ in range(30):
        g = random_graph(rng, int(rng.integers(2, 10)))
        r = reduce_graph(g)
        assert r.n_edges <= g.n_edges
        np.testing.assert_allclose(all_pairs_distances(r), all_pairs_distances(g), rtol=1e-12, atol=0)


def test_reduce_on_learned_graph(two_crossing, two_crossing_fits):
    from dsstitch.graph import build_graph, expand_bidirectional

    g = expand_bidirectional(build_graph([(p, m, i) for p, m, _, i in two_crossing_fits]), two_crossing)
    r = reduce_graph(g)
    assert r.n_edges < g.n_edges
    np.testing.assert_allclose(all_pairs_distances(r), all_pairs_distances(g), rtol=1e-12, atol=0)


def test_edges_follow_direction_and_skip_self_reversal(two_crossing_graph):
    g = two_crossing_graph
    for i, j, w in g.edge_list():
        vi, vj = g.vertices[i], g.vertices[j]
        assert vi.pair_key != vj.pair_key
        assert cos_angle(vi.direction, vj.mean - vi.mean) > 0
        assert w > 0


def test_reversed_vertices_negate_dynamics(two_crossing_graph):
    g = two_crossing_graph
    fwd = {v.pair_key: v for v in g.vertices if not v.reversed}
    rev = [v for v in g.vertices if v.reversed]
    assert len(rev) == len(fwd)
    for v in rev:
        np.testing.assert_array_equal(v.dynamics, -fwd[v.pair_key].dynamics)
        np.testing.assert_array_equal(v.direction, -fwd[v.pair_key].direction)


def test_graph_roundtrip(two_crossing_graph):
    back = GaussianGraph.from_dict(two_crossing_graph.to_dict())
    assert back.edge_list() == two_crossing_graph.edge_list()
    assert [v.key for v in back.vertices] == [v.key for v in two_crossing_graph.vertices]


def test_shortest_path_cost_matches_enumeration(two_crossing, two_crossing_graph):
    g = two_crossing_graph
    a, b = two_crossing.demonstrations
    att = attach_endpoints(g, a.start, b.attractor)
    path, cost = shortest_path_with_cost(att)
    adj = att.adjacency()
    total = sum(adj[u][v] for u, v in zip([att.start_id] + path, path + [att.goal_id]))
    assert total == pytest.approx(cost, rel=1e-12)
    dist, _ = dijkstra(adj, att.start_id)
    assert dist[att.goal_id] == cost


def brute_force_window_safe(att, max_len=8):
    adj = att.adjacency()
    n = att.graph.n_vertices
    pair = [v.pair_key for v in att.graph.vertices]
    best = np.inf

    def ok(seq):
        a, b, c = seq
        inner = [v for v in seq if 0 <= v < n]
        if len(inner) < 3:
            return not (0 <= a < n and 0 <= c < n and (a == c or pair[a] == pair[c]))
        return len({pair[v] for v in inner}) == 3

    def walk(path, w):
        nonlocal best
        if w >= best:
            return
        u = path[-1]
        if u == att.goal_id:
            best = w
            return
        if len(path) > max_len:
            return
        for v, x in adj.get(u, {}).items():
            if len(path) >= 2 and not ok((path[-2], u, v)):
                continue
            walk(path + [v], w + x)

    walk([att.start_id], 0.0)
    return best


def test_window_safe_path_matches_enumeration():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(100):
        k = int(rng.integers(2, 5))
        fwd = [make_vertex(rng.uniform(0, 5, 2), rng.normal(size=2), "d", i) for i in range(k)]
        verts = tuple(fwd + [v.reversed_copy() for v in fwd])
        n = len(verts)
        adj = random_adjacency(rng, n, 0.5)
        for i in range(n):
            adj[i].pop(i, None)
            for j in list(adj[i]):
                if verts[i].pair_key == verts[j].pair_key:
                    del adj[i][j]
        g = GaussianGraph(verts, adj, GraphParams())
        try:
            att = attach_endpoints(g, rng.uniform(0, 5, 2), rng.uniform(0, 5, 2))
        except NoGoalEdges:
            continue
        expected = brute_force_window_safe(att)
        try:
            path, cost = window_safe_path_with_cost(att)
        except NoPath:
            assert np.isinf(expected)
            continue
        checked += 1
        assert cost == pytest.approx(expected, rel=1e-12)
        for a, b, c in zip(path, path[1:], path[2:]):
            assert len({verts[a].pair_key, verts[b].pair_key, verts[c].pair_key}) == 3
    assert checked > 20


def test_spt_contains_path_and_one_member_per_pair(two_crossing, two_crossing_graph):
    g = two_crossing_graph
    goal = two_crossing.demonstrations[0].attractor
    sel = shortest_path_tree(attach_endpoints(g, None, goal))
    pairs = [g.vertices[i].pair_key for i in sel]
    assert len(pairs) == len(set(pairs))
    assert len(sel) > 0


def test_goal_without_incoming_edges():
    v = make_vertex([0.0, 0.0], [1.0, 0.0])
    g = GaussianGraph((v,), {0: {}}, GraphParams())
    with pytest.raises(NoGoalEdges):
        attach_endpoints(g, None, np.array([-5.0, 0.0]))


def test_params_validation():
    with pytest.raises(ValueError):
        GraphParams(eta_bc=1.0)
    with pytest.raises(ValueError):
        GraphParams(eta_dist=-1.0)
