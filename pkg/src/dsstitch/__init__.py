"""Learning, stitching and chaining stable dynamical-system motion
policies over a graph of Gaussian components."""

from .benchmark import METHODS, BenchParams, run_benchmark, write_results
from .chaining import DSChain, SegmentTable, build_chain, simulate_chain, verify_gas_criteria
from .datasets import (
    Demonstration,
    DemonstrationSet,
    Trajectory,
    dataset_hash,
    generate_synthetic_2d,
    load_dataset,
    save_dataset,
)
from .errors import DSStitchError
from .gmm import GaussianComponent, MixtureFit, bhattacharyya_coefficient, fit_gmm, posteriors
from .graph import (
    GaussianGraph,
    GraphParams,
    attach_endpoints,
    build_graph,
    expand_bidirectional,
    reduce_graph,
    shortest_path,
    shortest_path_tree,
)
from .lpvds import StablePolicy, fit_demonstrations, fit_ds_given_gmm, fit_lpvds, verify_stability
from .metrics import data_support, velocity_rmse
from .simulation import simulate, simulate_policy
from .stitching import Method, Reuse, StitchRequest, stitch

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "BenchParams",
    "DSChain",
    "DSStitchError",
    "Demonstration",
    "DemonstrationSet",
    "GaussianComponent",
    "GaussianGraph",
    "GraphParams",
    "Method",
    "MixtureFit",
    "Reuse",
    "SegmentTable",
    "StablePolicy",
    "StitchRequest",
    "Trajectory",
    "attach_endpoints",
    "bhattacharyya_coefficient",
    "build_chain",
    "build_graph",
    "data_support",
    "dataset_hash",
    "expand_bidirectional",
    "fit_demonstrations",
    "fit_ds_given_gmm",
    "fit_gmm",
    "fit_lpvds",
    "generate_synthetic_2d",
    "load_dataset",
    "posteriors",
    "reduce_graph",
    "run_benchmark",
    "save_dataset",
    "shortest_path",
    "shortest_path_tree",
    "simulate",
    "simulate_chain",
    "simulate_policy",
    "stitch",
    "velocity_rmse",
    "verify_gas_criteria",
    "verify_stability",
    "write_results",
]
