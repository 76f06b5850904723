"""Command-line interface: ``dsstitch <command> ...``.

Exit codes: 0 success, 1 method failure (no path, failed rollout or
verification), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import benchmark
from .chaining import DSChain, SegmentTable, build_chain, simulate_chain, verify_gas_criteria
from .datasets import dataset_hash, generate_synthetic_2d, load_dataset, save_dataset
from .errors import DSStitchError, EmptySelection, NoGoalEdges, NoPath, SegmentReversalConflict
from .gmm import MixtureFit
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
from .lpvds import DEFAULT_MARGIN, StablePolicy, fit_lpvds, verify_stability
from .plotting import render_svg
from .simulation import DEFAULT_DT, DEFAULT_T_MAX, simulate_policy
from .stitching import Method, Reuse, StitchRequest, provenance, stitch

log = logging.getLogger("dsstitch")

METHOD_FAILURES = (NoPath, NoGoalEdges, SegmentReversalConflict, EmptySelection)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    eta_bc: float = 0.05
    eta_dist: float = 2.0
    eta_dir: float = 1.0
    alpha: float = 0.5
    reuse: str = "all"
    method: str = "stitch-sp"
    dt: float = DEFAULT_DT
    t_max: float = DEFAULT_T_MAX
    eps_goal: float | None = None
    v_max: float | None = None
    seeds: tuple[int, ...] = (1, 2, 3, 4)
    k_max: int = 10
    margin_rel: float = DEFAULT_MARGIN

    def validate(self) -> "RunConfig":
        if not 0.0 <= self.eta_bc < 1.0:
            raise UsageError("eta_bc must lie in [0, 1)")
        if self.eta_dist < 0 or self.eta_dir < 0:
            raise UsageError("eta_dist and eta_dir must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise UsageError("alpha must lie in [0, 1]")
        if not self.t_max > 0 or not self.dt > 0:
            raise UsageError("dt and t_max must be positive")
        if self.reuse not in ("all", "ds"):
            raise UsageError("reuse must be 'all' or 'ds'")
        return self

    @property
    def graph_params(self) -> GraphParams:
        return GraphParams(self.eta_bc, self.eta_dist, self.eta_dir)


def default_seed() -> int:
    raw = os.environ.get("DSSTITCH_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"DSSTITCH_SEED must be an integer, got {raw!r}") from None


def load_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        names = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(raw) - names
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "seeds" in raw:
            raw["seeds"] = tuple(int(s) for s in raw["seeds"])
        cfg = dataclasses.replace(cfg, **raw)
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, tuple(v) if f.name == "seeds" else v)
    return cfg.validate()


def _vector(text: str) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.replace(" ", "").split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    return v


def _write_json(path: str | Path, obj: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


# ---------------------------------------------------------------------------
# model files


def _model_file(policy: StablePolicy, mixture: MixtureFit, demo_id: str, seed: int, ds_hash: str) -> dict:
    return {
        "kind": "demo-model",
        "demo": demo_id,
        "seed": seed,
        "dataset_hash": ds_hash,
        "model": policy.to_dict(),
        "assignments": mixture.assignments.tolist(),
    }


def load_models(models_dir: str | Path, ds_hash: str) -> list[tuple[StablePolicy, MixtureFit, str]]:
    """Per-demo models from ``models_dir``; refuses files learned on a
    different dataset."""
    files = sorted(Path(models_dir).glob("*.model.json"))
    if not files:
        raise UsageError(f"no model files in {models_dir}")
    out = []
    for f in files:
        raw = _read_json(f)
        if raw.get("dataset_hash") != ds_hash:
            raise UsageError(f"{f.name} was learned on a different dataset (hash mismatch)")
        policy = StablePolicy.from_dict(raw["model"])
        mixture = MixtureFit(policy.components, np.array(raw["assignments"], dtype=int))
        out.append((policy, mixture, raw["demo"]))
    return out


def graph_from(args, cfg: RunConfig, dataset, ds_hash: str) -> GaussianGraph:
    if getattr(args, "graph", None):
        raw = _read_json(args.graph)
        if raw.get("dataset_hash") not in (None, ds_hash):
            raise UsageError("graph was built on a different dataset (hash mismatch)")
        return GaussianGraph.from_dict(raw["graph"])
    if not getattr(args, "models", None):
        raise UsageError("need --models or --graph")
    g = build_graph(load_models(args.models, ds_hash), cfg.graph_params)
    return reduce_graph(expand_bidirectional(g, dataset))


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    ds = generate_synthetic_2d(args.scenario, args.seed if args.seed is not None else default_seed())
    save_dataset(ds, args.out)
    log.info("wrote %s (%d demonstrations)", args.out, len(ds))
    return 0


def cmd_learn(args) -> int:
    cfg = load_config(args)
    ds = load_dataset(args.dataset)
    h = dataset_hash(ds)
    seed = args.seed if args.seed is not None else default_seed()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timing = {}
    for demo in ds:
        policy, mixture, report = fit_lpvds(
            demo.positions,
            demo.velocities,
            demo.attractor,
            cfg.k_max,
            seed,
            trajectory_labels=demo.trajectory_labels,
            margin_rel=cfg.margin_rel,
        )
        _write_json(out / f"{demo.id}.model.json", _model_file(policy, mixture, demo.id, seed, h))
        rep = report.to_dict()
        timing[demo.id] = rep.pop("wall_time")
        _write_json(out / f"{demo.id}.report.json", rep)
        log.info("%s: K=%d objective=%.4g", demo.id, policy.n_components, report.objective)
    _write_json(out / "timing.json", timing)
    return 0


def cmd_graph(args) -> int:
    cfg = load_config(args)
    ds = load_dataset(args.dataset)
    h = dataset_hash(ds)
    g = build_graph(load_models(args.models, h), cfg.graph_params)
    g = expand_bidirectional(g, ds)
    if not args.no_reduce:
        g = reduce_graph(g)
    _write_json(args.out, {"kind": "graph", "dataset_hash": h, "graph": g.to_dict()})
    log.info("graph: %d vertices, %d edges", g.n_vertices, g.n_edges)
    return 0


def cmd_solve(args) -> int:
    cfg = load_config(args)
    ds = load_dataset(args.dataset)
    h = dataset_hash(ds)
    seed = args.seed if args.seed is not None else default_seed()
    method = args.method or cfg.method
    reuse = Reuse(args.reuse or cfg.reuse)
    goal = args.goal
    if goal.size != ds.dimension or (args.start is not None and args.start.size != ds.dimension):
        raise UsageError(f"start/goal must have {ds.dimension} coordinates")
    if method in ("stitch-sp", "chain") and args.start is None:
        raise UsageError(f"{method} needs --start")
    graph = graph_from(args, cfg, ds, h)
    if method == "stitch-sp" or method == "stitch-spt":
        m = Method.SP if method == "stitch-sp" else Method.SPT
        att = attach_endpoints(graph, args.start if m is Method.SP else None, goal)
        idx = shortest_path(att) if m is Method.SP else shortest_path_tree(att)
        req = StitchRequest(tuple(graph.vertices[i] for i in idx), goal, reuse, m)
        policy, _ = stitch(req, ds, seed, cfg.k_max, cfg.margin_rel)
        out = {"kind": "policy", "dataset_hash": h, "model": policy.to_dict(), "provenance": provenance(req)}
    elif method == "chain":
        table = SegmentTable()
        if args.precompute and Path(args.precompute).exists():
            table = SegmentTable.load(args.precompute)
        idx = window_safe_path(attach_endpoints(graph, args.start, goal))
        chain = build_chain(
            tuple(graph.vertices[i] for i in idx),
            goal,
            ds,
            reuse,
            cfg.alpha,
            start=args.start,
            initial=args.initial,
            seed=seed,
            table=table,
            margin_rel=cfg.margin_rel,
        )
        log.info("segment fits: %d (table hits: %d)", table.fits, table.hits)
        if args.precompute:
            table.save(args.precompute)
        out = chain.to_dict(str(args.precompute) if args.precompute else None)
        out["dataset_hash"] = h
    else:
        raise UsageError(f"unknown method {method!r}")
    _write_json(args.out, out)
    return 0


def load_artifact(path: str | Path, table_path: str | None = None) -> StablePolicy | DSChain:
    raw = _read_json(path)
    kind = raw.get("kind")
    if kind == "policy":
        return StablePolicy.from_dict(raw["model"])
    if kind == "demo-model":
        return StablePolicy.from_dict(raw["model"])
    if kind == "chain":
        table_path = table_path or raw.get("segment_table")
        table = SegmentTable.load(table_path) if table_path else None
        return DSChain.from_dict(raw, table)
    raise UsageError(f"{path}: unknown artifact kind {kind!r}")


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    art = load_artifact(args.artifact, args.table)
    eps, vmax = cfg.eps_goal, cfg.v_max
    if args.dataset:
        ds = load_dataset(args.dataset)
        eps = eps if eps is not None else 0.01 * ds.diagonal()
        vmax = vmax if vmax is not None else 10.0 * ds.mean_speed()
    if eps is None:
        raise UsageError("need --eps-goal or --dataset to set the goal tolerance")
    if isinstance(art, DSChain):
        res = simulate_chain(art, args.start, eps, cfg.dt, cfg.t_max, vmax)
    else:
        res = simulate_policy(art, args.start, eps, cfg.dt, cfg.t_max, vmax)
    d = res.positions.shape[1]
    header = ["t"] + [f"x{i}" for i in range(d)] + [f"v{i}" for i in range(d)] + (["mode"] if res.modes is not None else [])
    cols = [res.times[:, None], res.positions, res.velocities]
    if res.modes is not None:
        cols.append(res.modes[:, None])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(args.out, np.hstack(cols), delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    summary = {"success": res.success, "time_to_goal": res.time_to_goal, "mode_trace": res.mode_trace}
    print(json.dumps(summary))
    return 0 if res.success else 1


def cmd_bench(args) -> int:
    cfg = load_config(args)
    methods = [m for m in (args.methods.split(",") if args.methods is not None else benchmark.METHODS) if m]
    if not methods:
        raise UsageError("empty method list")
    unknown = [m for m in methods if m not in benchmark.METHODS]
    if unknown:
        raise UsageError(f"unknown methods: {unknown}")
    ds = load_dataset(args.dataset)
    params = benchmark.BenchParams(
        cfg.graph_params, cfg.alpha, cfg.dt, cfg.t_max, cfg.eps_goal, cfg.v_max, cfg.k_max, cfg.margin_rel
    )
    res = benchmark.run_benchmark(ds, methods, cfg.seeds, params, jobs=args.jobs)
    paths = benchmark.write_results(res, args.out_dir)
    for row in res.rows:
        log.info(
            "%-15s success %.3f  rmse %.3f  support %.3f",
            row.method, row.success_rate, row.rmse_mean, row.support_mean,
        )
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return 0


def _read_trajectory(path: str) -> np.ndarray:
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    names = [n for n in data.dtype.names if n.startswith("x")]
    return np.column_stack([data[n] for n in names])


def cmd_plot(args) -> int:
    ds = load_dataset(args.dataset) if args.dataset else None
    graph = None
    if args.graph:
        graph = GaussianGraph.from_dict(_read_json(args.graph)["graph"])
    rollouts = [_read_trajectory(p) for p in args.trajectory or []]
    svg = render_svg(ds, graph, rollouts, title=args.title or "")
    Path(args.out).write_text(svg)
    return 0


def cmd_verify(args) -> int:
    art = load_artifact(args.artifact, args.table)
    if isinstance(art, DSChain):
        report = verify_gas_criteria(art)
        out = report.to_dict()
    else:
        rep = verify_stability(art)
        out = {"passed": rep.passed, "margins": rep.margins, "lyapunov_min_eig": rep.lyapunov_min_eig}
    print(json.dumps(out, indent=1))
    return 0 if out["passed"] else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsstitch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON run configuration; flags override it")
        sp.add_argument("--eta-bc", dest="eta_bc", type=float)
        sp.add_argument("--eta-dist", dest="eta_dist", type=float)
        sp.add_argument("--eta-dir", dest="eta_dir", type=float)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--t-max", dest="t_max", type=float)
        sp.add_argument("--eps-goal", dest="eps_goal", type=float)
        sp.add_argument("--v-max", dest="v_max", type=float)
        sp.add_argument("--k-max", dest="k_max", type=int)
        sp.add_argument("--margin-rel", dest="margin_rel", type=float)
        return sp

    g = sub.add_parser("gen", help="generate a synthetic 2-D dataset")
    g.add_argument("--scenario", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--out", required=True)
    g.set_defaults(func=cmd_gen)

    lr = with_config(sub.add_parser("learn", help="fit one policy per demonstration"))
    lr.add_argument("--dataset", required=True)
    lr.add_argument("--out-dir", "-o", dest="out_dir", required=True)
    lr.add_argument("--seed", type=int)
    lr.set_defaults(func=cmd_learn)

    gr = with_config(sub.add_parser("graph", help="build the Gaussian graph"))
    gr.add_argument("--dataset", required=True)
    gr.add_argument("--models", required=True)
    gr.add_argument("--no-reduce", action="store_true")
    gr.add_argument("-o", "--out", required=True)
    gr.set_defaults(func=cmd_graph)

    so = with_config(sub.add_parser("solve", help="synthesize a policy or chain for a start/goal pair"))
    so.add_argument("--dataset", required=True)
    so.add_argument("--models")
    so.add_argument("--graph")
    so.add_argument("--method", choices=["stitch-sp", "stitch-spt", "chain"])
    so.add_argument("--reuse", choices=["all", "ds"])
    so.add_argument("--start", type=_vector)
    so.add_argument("--goal", type=_vector, required=True)
    so.add_argument("--precompute", help="segment table file (read if present, updated after)")
    so.add_argument("--initial", action="store_true", help="prepend the optional initial chain policy")
    so.add_argument("--seed", type=int)
    so.add_argument("-o", "--out", required=True)
    so.set_defaults(func=cmd_solve)

    si = with_config(sub.add_parser("simulate", help="roll out a policy or chain"))
    si.add_argument("--artifact", required=True)
    si.add_argument("--table")
    si.add_argument("--dataset")
    si.add_argument("--start", type=_vector, required=True)
    si.add_argument("-o", "--out", required=True)
    si.set_defaults(func=cmd_simulate)

    be = with_config(sub.add_parser("bench", help="run the benchmark"))
    be.add_argument("--dataset", required=True)
    be.add_argument("--methods", help="comma-separated subset of: " + ",".join(benchmark.METHODS))
    be.add_argument("--seeds", type=int, nargs="+")
    be.add_argument("--jobs", type=int, default=1)
    be.add_argument("--out-dir", "-o", dest="out_dir", required=True)
    be.set_defaults(func=cmd_bench)

    pl = sub.add_parser("plot", help="render an SVG (2-D only)")
    pl.add_argument("--dataset")
    pl.add_argument("--graph")
    pl.add_argument("--trajectory", action="append", help="CSV written by simulate")
    pl.add_argument("--title")
    pl.add_argument("-o", "--out", required=True)
    pl.set_defaults(func=cmd_plot)

    ve = sub.add_parser("verify", help="check stability (policy) or the chain convergence criteria")
    ve.add_argument("--artifact", required=True)
    ve.add_argument("--table")
    ve.set_defaults(func=cmd_verify)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr
    )
    try:
        return args.func(args)
    except METHOD_FAILURES as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (UsageError, DSStitchError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
