"""Benchmark harness: every ordered pair of pooled demonstration endpoints is
an instance; each method synthesizes a policy or chain for it, which is then
rolled out and scored.

Methods are ``baseline-{all,ds}``, ``stitch-sp-{all,ds}``,
``stitch-spt-{all,ds}`` and ``chain-{all,ds}``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chaining import DEFAULT_ALPHA, DSChain, SegmentTable, build_chain, simulate_chain
from .datasets import DemonstrationSet
from .errors import DSStitchError
from .gmm import MixtureFit, mixture_from_clusters
from .graph import (
    GaussianGraph,
    GraphParams,
    attach_endpoints,
    build_graph,
    expand_bidirectional,
    reduce_graph,
    shortest_path,
    shortest_path_tree,
    window_safe_path,
)
from .lpvds import DEFAULT_MARGIN, StablePolicy, fit_demonstrations, fit_ds_given_gmm, fit_lpvds
from .metrics import SupportModel, data_support, support_model, velocity_rmse
from .simulation import DEFAULT_DT, DEFAULT_T_MAX, simulate_policy
from .stitching import DEFAULT_K_MAX, Method, Reuse, StitchRequest, collect_filtered_data, stitch

METHODS = (
    "baseline-all",
    "baseline-ds",
    "stitch-sp-all",
    "stitch-sp-ds",
    "stitch-spt-all",
    "stitch-spt-ds",
    "chain-all",
    "chain-ds",
)


@dataclass(frozen=True)
class BenchParams:
    graph: GraphParams = GraphParams()
    alpha: float = DEFAULT_ALPHA
    dt: float = DEFAULT_DT
    t_max: float = DEFAULT_T_MAX
    eps_goal: float | None = None  # default: 1% of the dataset diagonal
    v_max: float | None = None  # default: 10x the mean demonstration speed
    k_max: int = DEFAULT_K_MAX
    margin_rel: float = DEFAULT_MARGIN

    def resolved(self, dataset: DemonstrationSet) -> "BenchParams":
        return dataclasses.replace(
            self,
            eps_goal=self.eps_goal if self.eps_goal is not None else 0.01 * dataset.diagonal(),
            v_max=self.v_max if self.v_max is not None else 10.0 * dataset.mean_speed(),
        )


@dataclass(frozen=True)
class Endpoint:
    demo_id: str
    kind: str  # "start" or "goal"
    position: np.ndarray

    @property
    def label(self) -> str:
        return f"{self.demo_id}:{self.kind}"


def pooled_endpoints(dataset: DemonstrationSet) -> list[Endpoint]:
    """Each demonstration's mean start and its attractor."""
    out = []
    for demo in dataset:
        out.append(Endpoint(demo.id, "start", demo.start))
        out.append(Endpoint(demo.id, "goal", demo.attractor))
    return out


def instance_pairs(n_endpoints: int) -> list[tuple[int, int]]:
    """All ordered pairs of distinct endpoints: ``n (n - 1)`` instances."""
    return [(i, j) for i in range(n_endpoints) for j in range(n_endpoints) if i != j]


@dataclass
class InstanceRecord:
    instance: str
    method: str
    seed: int
    success: bool
    rmse: float = math.nan
    data_support: float = math.nan
    synth_time_s: float = math.nan
    sim_time_s: float = math.nan
    cross_demo: bool = False
    time_to_goal: float = math.nan
    error: str = ""
    artifact: StablePolicy | DSChain | None = field(default=None, repr=False, compare=False)

    METRIC_FIELDS = ("instance", "method", "seed", "success", "rmse", "data_support", "cross_demo", "time_to_goal", "error")
    TIMING_FIELDS = ("instance", "method", "seed", "synth_time_s", "sim_time_s")


@dataclass
class MetricsRow:
    method: str
    runs: int
    success_rate: float
    cross_success_rate: float
    rmse_mean: float
    rmse_std: float
    support_mean: float
    support_std: float
    synth_time_mean: float
    synth_time_std: float

    TABLE_FIELDS = (
        "method", "runs", "success_rate", "cross_success_rate",
        "rmse_mean", "rmse_std", "support_mean", "support_std",
    )
    TIMING_FIELDS = ("method", "synth_time_mean", "synth_time_std")


@dataclass
class BenchResult:
    records: list[InstanceRecord]
    rows: list[MetricsRow]
    precompute_time_s: dict[str, float] = field(default_factory=dict)

    def row(self, method: str) -> MetricsRow:
        return next(r for r in self.rows if r.method == method)


# ---------------------------------------------------------------------------
# per-seed state


@dataclass
class SeedContext:
    """Everything synthesized for one seed: per-demo fits, the reduced graph,
    segment tables and caches of goal-only (start-independent) policies."""

    dataset: DemonstrationSet
    seed: int
    params: BenchParams
    mixtures: dict[str, MixtureFit]
    graph: GaussianGraph
    tables: dict[Reuse, SegmentTable] = field(default_factory=dict)
    cache: dict = field(default_factory=dict)
    segment_time: dict[Reuse, float] = field(default_factory=dict)


def prepare_seed(dataset: DemonstrationSet, seed: int, params: BenchParams) -> SeedContext:
    fits = fit_demonstrations(dataset, seed, params.k_max, params.margin_rel)
    graph = build_graph([(p, m, demo_id) for p, m, _, demo_id in fits], params.graph)
    graph = reduce_graph(expand_bidirectional(graph, dataset))
    return SeedContext(
        dataset,
        seed,
        params,
        {demo_id: m for _, m, _, demo_id in fits},
        graph,
        {Reuse.ALL: SegmentTable(), Reuse.DS: SegmentTable()},
        {},
        {Reuse.ALL: 0.0, Reuse.DS: 0.0},
    )


def oriented_pool(dataset: DemonstrationSet, goal: np.ndarray) -> list[bool]:
    """Per demonstration, whether to negate its velocities: bidirectional
    demonstrations run backwards when their start is nearer the goal than
    their attractor."""
    out = []
    for demo in dataset:
        flip = demo.bidirectional and np.linalg.norm(demo.start - goal) < np.linalg.norm(demo.attractor - goal)
        out.append(bool(flip))
    return out


def baseline_data(dataset: DemonstrationSet, flips: Sequence[bool]):
    X, V, T = [], [], []
    for j, (demo, flip) in enumerate(zip(dataset, flips)):
        X.append(demo.positions)
        V.append(-demo.velocities if flip else demo.velocities)
        T.append(demo.trajectory_labels + 1000 * j)
    return np.vstack(X), np.vstack(V), np.concatenate(T)


def fit_baseline(
    dataset: DemonstrationSet,
    goal: np.ndarray,
    reuse: Reuse,
    seed: int,
    mixtures: dict[str, MixtureFit] | None = None,
    k_max: int = DEFAULT_K_MAX,
    margin_rel: float = DEFAULT_MARGIN,
) -> StablePolicy:
    """One policy on all demonstrations pooled toward ``goal``. ``DS`` reuses
    the per-demonstration mixtures and refits only the dynamics."""
    X, V, T = baseline_data(dataset, oriented_pool(dataset, goal))
    speed = dataset.mean_speed()
    if reuse is Reuse.DS:
        if mixtures is None:
            raise ValueError("the DS baseline needs the per-demonstration mixtures")
        comps, labels, offset = [], [], 0
        for demo in dataset:
            m = mixtures[demo.id]
            comps.extend(m.components)
            labels.append(m.assignments + offset)
            offset += m.n_components
        mixture = mixture_from_clusters(comps, np.concatenate(labels))
        policy, _ = fit_ds_given_gmm(mixture, X, V, goal, margin_rel=margin_rel, speed=speed)
        return policy
    policy, _, _ = fit_lpvds(X, V, goal, k_max, seed, trajectory_labels=T, margin_rel=margin_rel, speed=speed)
    return policy


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def _synthesize(ctx: SeedContext, method: str, start: np.ndarray, goal_idx: int, goal: np.ndarray):
    """Returns (artifact, reference positions, velocities, chain vertex labels
    or None, synthesis seconds)."""
    kind, reuse = method.rsplit("-", 1)
    reuse = Reuse(reuse)
    ds, p = ctx.dataset, ctx.params
    if kind == "baseline":
        key = (kind, reuse, goal_idx)
        if key not in ctx.cache:
            t0 = time.perf_counter()
            policy = fit_baseline(ds, goal, reuse, ctx.seed, ctx.mixtures, p.k_max, p.margin_rel)
            X, V, _ = baseline_data(ds, oriented_pool(ds, goal))
            ctx.cache[key] = (policy, X, V, None, time.perf_counter() - t0)
        return ctx.cache[key]
    if kind == "stitch-spt":
        key = (kind, reuse, goal_idx)
        if key not in ctx.cache:
            t0 = time.perf_counter()
            att = attach_endpoints(ctx.graph, None, goal)
            sel = tuple(ctx.graph.vertices[i] for i in shortest_path_tree(att))
            policy, _ = stitch(StitchRequest(sel, goal, reuse, Method.SPT), ds, ctx.seed, p.k_max, p.margin_rel)
            data = collect_filtered_data(sel, ds)
            ctx.cache[key] = (policy, data.positions, data.velocities, None, time.perf_counter() - t0)
        return ctx.cache[key]
    if kind == "stitch-sp":
        t0 = time.perf_counter()
        idx = shortest_path(attach_endpoints(ctx.graph, start, goal))
        key = (kind, reuse, goal_idx, tuple(idx))
        if key not in ctx.cache:
            sel = tuple(ctx.graph.vertices[i] for i in idx)
            policy, _ = stitch(StitchRequest(sel, goal, reuse, Method.SP), ds, ctx.seed, p.k_max, p.margin_rel)
            data = collect_filtered_data(sel, ds)
            ctx.cache[key] = (policy, data.positions, data.velocities, None, time.perf_counter() - t0)
        return ctx.cache[key]
    if kind == "chain":
        t0 = time.perf_counter()
        idx = window_safe_path(attach_endpoints(ctx.graph, start, goal))
        key = (kind, reuse, goal_idx, tuple(idx))
        if key not in ctx.cache:
            table = ctx.tables[reuse]
            seg_before = table.fit_seconds
            sel = tuple(ctx.graph.vertices[i] for i in idx)
            chain = build_chain(
                sel, goal, ds, reuse, p.alpha, start=start, seed=ctx.seed, table=table, margin_rel=p.margin_rel
            )
            seg = table.fit_seconds - seg_before
            ctx.segment_time[reuse] += seg
            data = collect_filtered_data(sel, ds)
            # segment fits count as offline precomputation
            ctx.cache[key] = (chain, data.positions, data.velocities, data.vertex_labels, time.perf_counter() - t0 - seg)
        chain, X, V, labels, synth = ctx.cache[key]
        return dataclasses.replace(chain, start=np.asarray(start, dtype=float)), X, V, labels, synth
    raise ValueError(f"unknown method {method!r}")


def run_instance(
    ctx: SeedContext,
    method: str,
    endpoints: Sequence[Endpoint],
    pair: tuple[int, int],
    support: SupportModel,
    keep_artifact: bool = False,
) -> InstanceRecord:
    i, j = pair
    s, g = endpoints[i], endpoints[j]
    rec = InstanceRecord(f"{s.label}->{g.label}", method, ctx.seed, False, cross_demo=s.demo_id != g.demo_id)
    p = ctx.params
    try:
        artifact, X, V, labels, synth = _synthesize(ctx, method, s.position, j, g.position)
    except DSStitchError as exc:
        rec.error = type(exc).__name__
        return rec
    rec.synth_time_s = synth
    t0 = time.perf_counter()
    if isinstance(artifact, DSChain):
        sim = simulate_chain(artifact, s.position, p.eps_goal, p.dt, p.t_max, p.v_max)
    else:
        sim = simulate_policy(artifact, s.position, p.eps_goal, p.dt, p.t_max, p.v_max)
    rec.sim_time_s = time.perf_counter() - t0
    rec.success = sim.success
    if keep_artifact:
        rec.artifact = artifact
    if not sim.success:
        rec.error = "Timeout"
        return rec
    rec.time_to_goal = float(sim.time_to_goal)
    rec.rmse = velocity_rmse(artifact, X, V, labels)
    rec.data_support = data_support(sim.positions, support)
    return rec


def _run_seed(args) -> tuple[list[InstanceRecord], dict[str, float]]:
    dataset, methods, seed, params, keep = args
    ctx = prepare_seed(dataset, seed, params)
    support = support_model(dataset)
    endpoints = pooled_endpoints(dataset)
    records = []
    for method in methods:
        for pair in instance_pairs(len(endpoints)):
            records.append(run_instance(ctx, method, endpoints, pair, support, keep))
    pre = {f"chain-{r.value}": t for r, t in ctx.segment_time.items()}
    return records, pre


def aggregate(records: Sequence[InstanceRecord], methods: Sequence[str]) -> list[MetricsRow]:
    """Success rates over all runs; metric means and deviations over
    successful runs only."""
    rows = []
    for m in methods:
        recs = [r for r in records if r.method == m]
        ok = [r for r in recs if r.success]
        cross = [r for r in recs if r.cross_demo]

        def stat(values):
            if not values:
                return math.nan, math.nan
            a = np.asarray(values, dtype=float)
            return float(a.mean()), float(a.std())

        rm, rs = stat([r.rmse for r in ok])
        sm, ss = stat([r.data_support for r in ok])
        tm, ts = stat([r.synth_time_s for r in ok])
        rows.append(
            MetricsRow(
                m,
                len(recs),
                len(ok) / len(recs) if recs else math.nan,
                sum(r.success for r in cross) / len(cross) if cross else math.nan,
                rm, rs, sm, ss, tm, ts,
            )
        )
    return rows


def run_benchmark(
    dataset: DemonstrationSet,
    methods: Sequence[str] = METHODS,
    seeds: Sequence[int] = (1, 2, 3, 4),
    params: BenchParams = BenchParams(),
    jobs: int = 1,
    keep_artifacts: bool = False,
) -> BenchResult:
    if len(dataset) < 2:
        raise ValueError("the benchmark needs at least two demonstrations")
    if not methods:
        raise ValueError("no methods selected")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods: {unknown}")
    params = params.resolved(dataset)
    tasks = [(dataset, tuple(methods), int(s), params, keep_artifacts) for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_run_seed, tasks))
    else:
        outs = [_run_seed(t) for t in tasks]
    records = [r for recs, _ in outs for r in recs]
    pre: dict[str, float] = {}
    for _, p in outs:
        for k, v in p.items():
            pre[k] = pre.get(k, 0.0) + v
    return BenchResult(records, aggregate(records, methods), pre)


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write(path: Path, fields: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in fields])


def write_results(result: BenchResult, out_dir: str | Path) -> dict[str, Path]:
    """Deterministic metrics go to ``records.csv`` / ``table.csv``; wall
    times to ``timing.csv`` / ``table_timing.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out / "records.csv",
        "timing": out / "timing.csv",
        "table": out / "table.csv",
        "table_timing": out / "table_timing.csv",
    }
    _write(paths["records"], InstanceRecord.METRIC_FIELDS, result.records)
    _write(paths["timing"], InstanceRecord.TIMING_FIELDS, result.records)
    _write(paths["table"], MetricsRow.TABLE_FIELDS, result.rows)
    _write(paths["table_timing"], MetricsRow.TIMING_FIELDS, result.rows)
    return paths


__all__ = [
    "BenchParams",
    "BenchResult",
    "Endpoint",
    "InstanceRecord",
    "METHODS",
    "MetricsRow",
    "SeedContext",
    "aggregate",
    "fit_baseline",
    "instance_pairs",
    "oriented_pool",
    "pooled_endpoints",
    "prepare_seed",
    "run_benchmark",
    "run_instance",
    "write_results",
]
