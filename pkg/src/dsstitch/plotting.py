"""Dependency-free SVG rendering of 2-D datasets, Gaussian graphs and
rollouts. Starts are drawn red and goals green."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .datasets import DemonstrationSet
from .errors import DSStitchError
from .graph import GaussianGraph
from .gmm import GaussianComponent

PALETTE = ("#1b9e77", "#377eb8", "#7570b3", "#66a61e", "#a6761d", "#1f78b4", "#6a3d9a", "#b15928")


class PlotDimensionError(DSStitchError, ValueError):
    pass


@dataclass
class _Frame:
    lo: np.ndarray
    hi: np.ndarray
    width: float
    height: float
    pad: float = 20.0

    def __call__(self, p: np.ndarray) -> tuple[float, float]:
        span = np.maximum(self.hi - self.lo, 1e-12)
        s = min((self.width - 2 * self.pad) / span[0], (self.height - 2 * self.pad) / span[1])
        x = self.pad + (p[0] - self.lo[0]) * s
        y = self.height - self.pad - (p[1] - self.lo[1]) * s
        return float(x), float(y)

    @property
    def scale(self) -> float:
        span = np.maximum(self.hi - self.lo, 1e-12)
        return float(min((self.width - 2 * self.pad) / span[0], (self.height - 2 * self.pad) / span[1]))


def _check_2d(arr: np.ndarray) -> None:
    if arr.shape[-1] != 2:
        raise PlotDimensionError("plotting supports d=2 only")


def _polyline(frame: _Frame, pts: np.ndarray, color: str, width: float = 1.5, opacity: float = 1.0) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in (frame(p) for p in pts))
    return (
        f'<polyline points="{coords}" fill="none" stroke="{color}" '
        f'stroke-width="{width}" stroke-opacity="{opacity}"/>'
    )


def _dot(frame: _Frame, p: np.ndarray, color: str, r: float = 4.0) -> str:
    x, y = frame(p)
    return f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{color}"/>'


def _ellipse(frame: _Frame, comp: GaussianComponent, k: float, color: str) -> str:
    w, V = np.linalg.eigh(comp.covariance)
    w = np.sqrt(np.maximum(w, 0.0)) * k * frame.scale
    angle = -np.degrees(np.arctan2(V[1, 1], V[0, 1]))
    x, y = frame(comp.mean)
    return (
        f'<ellipse cx="{x:.2f}" cy="{y:.2f}" rx="{w[1]:.2f}" ry="{w[0]:.2f}" '
        f'transform="rotate({angle:.2f} {x:.2f} {y:.2f})" fill="none" stroke="{color}" stroke-width="1"/>'
    )


def _arrow(frame: _Frame, a: np.ndarray, b: np.ndarray, color: str) -> str:
    (x1, y1), (x2, y2) = frame(a), frame(b)
    return (
        f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{color}" '
        f'stroke-width="0.8" stroke-opacity="0.6" marker-end="url(#arrow)"/>'
    )


def render_svg(
    dataset: DemonstrationSet | None = None,
    graph: GaussianGraph | None = None,
    rollouts: Sequence[np.ndarray] = (),
    components: Sequence[GaussianComponent] = (),
    width: int = 640,
    height: int = 640,
    title: str = "",
) -> str:
    """Layers, bottom to top: demonstrations, Gaussian ellipses (1 and 2
    sigma), graph edges, rollouts, start (red) and goal (green) markers."""
    pts = []
    if dataset is not None:
        if dataset.dimension != 2:
            raise PlotDimensionError("plotting supports d=2 only")
        pts.append(dataset.positions)
    if graph is not None:
        means = np.array([v.mean for v in graph.vertices])
        _check_2d(means)
        pts.append(means)
    for r in rollouts:
        r = np.atleast_2d(r)
        _check_2d(r)
        pts.append(r)
    for c in components:
        _check_2d(c.mean)
        pts.append(c.mean[None])
    if not pts:
        raise ValueError("nothing to plot")
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    margin = 0.05 * np.maximum(hi - lo, 1e-9)
    frame = _Frame(lo - margin, hi + margin, float(width), float(height))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="5" markerHeight="5" '
        'orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#555"/></marker></defs>',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="10" y="16" font-family="sans-serif" font-size="13">{escape(title)}</text>')
    if dataset is not None:
        for i, demo in enumerate(dataset):
            color = PALETTE[i % len(PALETTE)]
            for t in demo.trajectories:
                out.append(_polyline(frame, t.positions, color, 1.2, 0.8))
    comps = list(components) + ([v.component for v in graph.vertices if not v.reversed] if graph else [])
    for c in comps:
        for k in (1.0, 2.0):
            out.append(_ellipse(frame, c, k, "#ff8c00"))
    if graph is not None:
        for i, j, _ in graph.edge_list():
            out.append(_arrow(frame, graph.vertices[i].mean, graph.vertices[j].mean, "#555"))
    for r in rollouts:
        out.append(_polyline(frame, np.atleast_2d(r), "#d62728", 2.0))
    if dataset is not None:
        for demo in dataset:
            for t in demo.trajectories:
                out.append(_dot(frame, t.positions[0], "#d62728", 3.0))
            out.append(_dot(frame, demo.attractor, "#2ca02c", 5.0))
    for r in rollouts:
        r = np.atleast_2d(r)
        out.append(_dot(frame, r[0], "#d62728", 4.0))
        out.append(_dot(frame, r[-1], "#2ca02c", 4.0))
    out.append("</svg>")
    return "\n".join(out) + "\n"


__all__ = ["PlotDimensionError", "render_svg"]
