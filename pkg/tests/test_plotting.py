import re

import numpy as np
import pytest

from dsstitch.gmm import GaussianComponent
from dsstitch.plotting import PlotDimensionError, render_svg


def test_dataset_layer_colors(two_crossing):
    svg = render_svg(two_crossing)
    n_traj = sum(len(d.trajectories) for d in two_crossing)
    assert svg.count("<polyline") == n_traj
    # starts red, goals green
    assert svg.count('fill="#d62728"') == n_traj
    assert svg.count('fill="#2ca02c"') == len(two_crossing)


def test_graph_layer(two_crossing, two_crossing_graph):
    svg = render_svg(two_crossing, two_crossing_graph)
    n_fwd = sum(not v.reversed for v in two_crossing_graph.vertices)
    assert svg.count("<ellipse") == 2 * n_fwd
    assert svg.count("<line") == two_crossing_graph.n_edges


def test_ellipse_axes_follow_covariance():
    comp = GaussianComponent(1.0, np.zeros(2), np.diag([4.0, 1.0]))
    svg = render_svg(rollouts=[np.array([[-5.0, -5.0], [5.0, 5.0]])], components=[comp], width=400, height=400)
    rx, ry = (float(v) for v in re.search(r'rx="([\d.]+)" ry="([\d.]+)"', svg).groups())
    assert rx / ry == pytest.approx(2.0, rel=1e-3)


def test_rejects_3d():
    with pytest.raises(PlotDimensionError, match="plotting supports d=2 only"):
        render_svg(rollouts=[np.zeros((3, 3))])


def test_nothing_to_plot():
    with pytest.raises(ValueError):
        render_svg()
