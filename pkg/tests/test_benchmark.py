import csv
import math

import numpy as np
import pytest

from dsstitch.benchmark import (
    METHODS,
    InstanceRecord,
    aggregate,
    instance_pairs,
    oriented_pool,
    pooled_endpoints,
    run_benchmark,
    write_results,
)
from dsstitch.datasets import generate_synthetic_2d


@pytest.mark.parametrize("n,expected", [(6, 30), (14, 182), (2, 2)])
def test_instance_counts(n, expected):
    pairs = instance_pairs(n)
    assert len(pairs) == expected == n * (n - 1)
    assert len(set(pairs)) == len(pairs)
    assert all(i != j for i, j in pairs)


def test_pooled_endpoints_are_starts_and_attractors():
    ds = generate_synthetic_2d("six-network", 1)
    ends = pooled_endpoints(ds)
    assert len(ends) == 2 * len(ds)
    for demo in ds:
        mine = [e.position for e in ends if e.demo_id == demo.id]
        np.testing.assert_array_equal(mine[0], demo.start)
        np.testing.assert_array_equal(mine[1], demo.attractor)


def test_baseline_orientation_points_demos_at_goal():
    ds = generate_synthetic_2d("two-crossing", 1)
    a = ds.demonstrations[0]
    assert oriented_pool(ds, a.attractor)[0] is False
    assert oriented_pool(ds, a.start)[0] is True


def test_aggregate_uses_successes_only():
    recs = [
        InstanceRecord("a", "m", 1, True, rmse=1.0, data_support=0.5, synth_time_s=1.0, cross_demo=True),
        InstanceRecord("b", "m", 1, True, rmse=3.0, data_support=0.7, synth_time_s=1.0, cross_demo=False),
        InstanceRecord("c", "m", 1, False, rmse=100.0, data_support=0.0, cross_demo=True),
    ]
    (row,) = aggregate(recs, ["m"])
    assert row.runs == 3
    assert row.success_rate == pytest.approx(2 / 3)
    assert row.cross_success_rate == pytest.approx(0.5)
    assert row.rmse_mean == pytest.approx(2.0)
    assert row.rmse_std == pytest.approx(1.0)
    assert row.support_mean == pytest.approx(0.6)


def test_aggregate_without_successes():
    (row,) = aggregate([InstanceRecord("a", "m", 1, False)], ["m"])
    assert row.success_rate == 0.0
    assert math.isnan(row.rmse_mean)


def test_unknown_or_empty_methods():
    ds = generate_synthetic_2d("two-crossing", 1)
    with pytest.raises(ValueError):
        run_benchmark(ds, [], seeds=(1,))
    with pytest.raises(ValueError):
        run_benchmark(ds, ["nope"], seeds=(1,))


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    ds = generate_synthetic_2d("two-crossing", 1)
    methods = ["baseline-ds", "stitch-sp-ds", "chain-ds"]
    out = []
    for k in range(2):
        res = run_benchmark(ds, methods, seeds=(1, 2))
        d = tmp_path_factory.mktemp(f"run{k}")
        out.append((res, write_results(res, d)))
    return ds, methods, out


def test_bench_records_and_rows(small_runs):
    ds, methods, out = small_runs
    res, paths = out[0]
    n_pairs = len(instance_pairs(2 * len(ds)))
    assert len(res.records) == len(methods) * 2 * n_pairs
    assert [r.method for r in res.rows] == methods
    with open(paths["table"]) as fh:
        assert len(list(csv.DictReader(fh))) == len(methods)
    assert set(paths) == {"records", "timing", "table", "table_timing"}


def test_bench_outputs_are_byte_identical(small_runs):
    _, _, out = small_runs
    (_, a), (_, b) = out
    for key in ("records", "table"):
        assert a[key].read_bytes() == b[key].read_bytes()


def test_method_ids():
    assert len(METHODS) == 8
    assert {m.rsplit("-", 1)[1] for m in METHODS} == {"all", "ds"}
