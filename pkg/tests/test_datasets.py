import json

import numpy as np
import pytest

from dsstitch.datasets import (
    Demonstration,
    Trajectory,
    dataset_from_dict,
    dataset_hash,
    dataset_to_dict,
    dumps_dataset,
    estimate_velocities,
    generate_synthetic_2d,
    load_dataset,
    make_demonstration_set,
    save_dataset,
)
from dsstitch.errors import (
    AttractorInconsistent,
    DimensionMismatch,
    EmptyDemonstration,
    ParseError,
    UnknownScenario,
)


@pytest.mark.parametrize("scenario,n_demos", [("two-crossing", 2), ("six-network", 6), ("s-curves", 3)])
def test_scenarios_have_expected_demos(scenario, n_demos):
    ds = generate_synthetic_2d(scenario, 3)
    assert len(ds) == n_demos
    assert ds.dimension == 2
    assert all(demo.bidirectional for demo in ds)


def test_generator_is_deterministic():
    a = generate_synthetic_2d("six-network", 7)
    b = generate_synthetic_2d("six-network", 7)
    assert dumps_dataset(a) == dumps_dataset(b)
    assert dataset_hash(a) != dataset_hash(generate_synthetic_2d("six-network", 8))


def test_unknown_scenario():
    with pytest.raises(UnknownScenario):
        generate_synthetic_2d("nope", 0)


def test_roundtrip(tmp_path, two_crossing):
    path = tmp_path / "ds.json"
    save_dataset(two_crossing, path)
    back = load_dataset(path)
    assert back.demonstrations == two_crossing.demonstrations
    assert dataset_hash(back) == dataset_hash(two_crossing)


def test_edited_file_fails_hash_check(tmp_path, two_crossing):
    raw = json.loads(dumps_dataset(two_crossing))
    raw["demonstrations"][0]["trajectories"][0]["positions"][3][0] += 1e-3
    path = tmp_path / "ds.json"
    path.write_text(json.dumps(raw))
    with pytest.raises(ParseError):
        load_dataset(path)


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{")
    with pytest.raises(ParseError):
        load_dataset(path)


def test_dimension_field_must_match(two_crossing):
    raw = dataset_to_dict(two_crossing)
    raw["dimension"] = 3
    with pytest.raises(DimensionMismatch):
        dataset_from_dict(raw)


def test_missing_velocities_are_estimated(two_crossing):
    raw = dataset_to_dict(two_crossing)
    for demo in raw["demonstrations"]:
        for t in demo["trajectories"]:
            del t["velocities"]
    ds = dataset_from_dict(raw)
    assert all(t.velocities_estimated for demo in ds for t in demo.trajectories)


def test_attractor_consistency():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    traj = Trajectory(pos, np.zeros_like(pos), np.arange(3.0))
    with pytest.raises(AttractorInconsistent):
        make_demonstration_set([Demonstration("x", (traj,), np.array([5.0, 5.0]))])
    with pytest.raises(EmptyDemonstration):
        make_demonstration_set([])


def test_velocity_estimate_exact_on_quadratic():
    # central differences are exact for quadratics in the interior
    t = np.linspace(0, 2, 21)
    x = np.stack([t**2, 3 * t], axis=1)
    v = estimate_velocities(x, t)
    np.testing.assert_allclose(v[1:-1, 0], 2 * t[1:-1], atol=1e-12)
    np.testing.assert_allclose(v[:, 1], 3.0, atol=1e-12)


def test_summary_statistics(tiny_dataset):
    lo, hi = tiny_dataset.bounding_box()
    np.testing.assert_allclose(lo, tiny_dataset.positions.min(axis=0))
    np.testing.assert_allclose(tiny_dataset.diagonal(), np.linalg.norm(hi - lo))
    speeds = np.linalg.norm(tiny_dataset.velocities, axis=1)
    assert tiny_dataset.mean_speed() == pytest.approx(speeds.mean())
