"""Gaussian mixtures: component containers, densities, posteriors, the
Bhattacharyya overlap and an EM fitter with BIC model selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp

from . import _kernels
from .errors import DegenerateData, DimensionMismatch, SingularCovariance, TooFewPoints

LOG_2PI = np.log(2.0 * np.pi)
UNDERFLOW_LOG = np.log(1e-300)


def floor_covariance(cov: np.ndarray, floor: float | None = None) -> np.ndarray:
    """Symmetrize ``cov`` and clip its eigenvalues from below.

    The default floor is ``1e-8 * trace / d``.
    """
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    if floor is None:
        floor = 1e-8 * max(float(np.trace(cov)), 0.0) / d
    w, V = np.linalg.eigh(cov)
    if w.min() >= floor:
        return cov
    w = np.maximum(w, floor)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    prior: float
    mean: np.ndarray
    covariance: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)
    _log_norm: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"covariance {cov.shape} does not match mean of size {mean.size}")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance("covariance is not positive definite") from exc
        for arr in (mean, cov, chol):
            arr.setflags(write=False)
        object.__setattr__(self, "prior", float(self.prior))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        object.__setattr__(self, "_log_norm", -0.5 * (mean.size * LOG_2PI + log_det))

    @property
    def dimension(self) -> int:
        return self.mean.size

    @property
    def precision_cholesky(self) -> np.ndarray:
        """Lower factor ``L`` of the covariance (``Sigma = L L^T``)."""
        return self._chol

    @property
    def log_norm(self) -> float:
        return self._log_norm

    def mahalanobis_sq(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        z = solve_triangular(self._chol, (x - self.mean).T, lower=True)
        return np.sum(z * z, axis=0)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        return self._log_norm - 0.5 * self.mahalanobis_sq(x)

    def with_prior(self, prior: float) -> "GaussianComponent":
        return GaussianComponent(prior, self.mean, self.covariance)

    def to_dict(self) -> dict:
        return {"prior": self.prior, "mean": self.mean.tolist(), "covariance": self.covariance.tolist()}

    @classmethod
    def from_dict(cls, raw: dict) -> "GaussianComponent":
        return cls(raw["prior"], np.array(raw["mean"]), np.array(raw["covariance"]))

    def same_as(self, other: "GaussianComponent") -> bool:
        return (
            self.prior == other.prior
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.covariance, other.covariance)
        )


@dataclass(frozen=True, eq=False)
class MixtureFit:
    components: tuple[GaussianComponent, ...]
    assignments: np.ndarray
    bic: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        a = np.array(self.assignments, dtype=int)
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    @property
    def n_components(self) -> int:
        return len(self.components)

    def cluster(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)


def gaussian_pdf(component: GaussianComponent, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != component.dimension:
        raise DimensionMismatch(f"point of dimension {x.size} vs component of dimension {component.dimension}")
    return float(np.exp(component.log_pdf(x)[0]))


def weighted_log_densities(components: tuple[GaussianComponent, ...] | list, x: np.ndarray) -> np.ndarray:
    """``log(pi_k N(x | mu_k, Sigma_k))`` as an (n, K) array."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        return np.stack([np.log(c.prior) + c.log_pdf(x) for c in components], axis=1)


def posteriors(components, x: np.ndarray) -> np.ndarray:
    """Responsibilities of every component for ``x``.

    Accepts a single point (returns shape (K,)) or an (n, d) batch. Where
    every weighted density is below 1e-300 the ratio is 0/0; those points
    are assigned wholly to the Mahalanobis-nearest component.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    logw = weighted_log_densities(components, X)
    top = logw.max(axis=1)
    gamma = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    under = ~(top >= UNDERFLOW_LOG)
    if np.any(under):
        maha = np.stack([c.mahalanobis_sq(X[under]) for c in components], axis=1)
        gamma[under] = 0.0
        gamma[np.flatnonzero(under), np.argmin(maha, axis=1)] = 1.0
    return gamma[0] if single else gamma


def bhattacharyya_coefficient(a: GaussianComponent, b: GaussianComponent) -> float:
    if a.dimension != b.dimension:
        raise DimensionMismatch("Gaussians of different dimension")
    avg = 0.5 * (a.covariance + b.covariance)
    try:
        c, low = cho_factor(avg, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("averaged covariance is singular") from exc
    diff = a.mean - b.mean
    maha = float(diff @ cho_solve((c, low), diff))
    logdet_avg = 2.0 * float(np.sum(np.log(np.diag(c))))
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(a.precision_cholesky))))
    logdet_b = 2.0 * float(np.sum(np.log(np.diag(b.precision_cholesky))))
    distance = 0.125 * maha + 0.5 * (logdet_avg - 0.5 * (logdet_a + logdet_b))
    return float(np.exp(-max(distance, 0.0)))


# ---------------------------------------------------------------------------
# EM fitting


def _kmeans_pp(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = Z.shape[0]
    centers = [Z[rng.integers(n)]]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(Z[idx])
        d2 = np.minimum(d2, np.sum((Z - Z[idx]) ** 2, axis=1))
    return np.array(centers)


def _em_run(Z: np.ndarray, k: int, rng: np.random.Generator, floor: float, max_iter: int, tol: float):
    n, D = Z.shape
    centers = _kmeans_pp(Z, k, rng)
    labels = np.argmin(((Z[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    global_cov = floor_covariance(np.cov(Z.T, bias=True).reshape(D, D), floor)
    means = np.ascontiguousarray(centers, dtype=float)
    covs = np.repeat(global_cov[None], k, axis=0)
    ll, resp, history, count, ok = _kernels.em_loop(np.ascontiguousarray(Z), resp, means, covs, floor, max_iter, tol)
    if not ok:
        raise RuntimeError(f"EM log-likelihood decreased: {history[count - 2]} -> {history[count - 1]}")
    return ll, resp, history[:count].tolist()


def direction_features(positions: np.ndarray, velocities: np.ndarray, beta: float) -> np.ndarray:
    speed = np.linalg.norm(velocities, axis=1, keepdims=True)
    unit = np.divide(velocities, speed, out=np.zeros_like(velocities), where=speed > 0)
    return np.hstack([positions, beta * unit])


def default_direction_scale(positions: np.ndarray, trajectory_labels: np.ndarray | None = None) -> float:
    """Mean bounding-box diagonal over trajectories."""
    if trajectory_labels is None:
        trajectory_labels = np.zeros(positions.shape[0], dtype=int)
    diags = []
    for lab in np.unique(trajectory_labels):
        p = positions[trajectory_labels == lab]
        diags.append(float(np.linalg.norm(p.max(axis=0) - p.min(axis=0))))
    return float(np.mean(diags))


def canonical_order(positions: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    """Permutation sorting points lexicographically; makes fits independent
    of input order."""
    keys = np.hstack([positions, velocities]).T[::-1]
    return np.lexsort(keys)


def _hard_components(X: np.ndarray, resp: np.ndarray, d: int) -> tuple[list[GaussianComponent], np.ndarray]:
    resp = resp.copy()
    alive = list(range(resp.shape[1]))
    while True:
        labels = np.array(alive)[np.argmax(resp[:, alive], axis=1)]
        counts = {k: int(np.sum(labels == k)) for k in alive}
        small = [k for k in alive if counts[k] < d + 1]
        if not small or len(alive) == 1:
            break
        alive.remove(min(small, key=lambda k: (counts[k], k)))
    n = X.shape[0]
    scale = float(np.trace(np.cov(X.T, bias=True))) / d
    comps = []
    assign = np.empty(n, dtype=int)
    for new, k in enumerate(alive):
        idx = labels == k
        assign[idx] = new
        pts = X[idx]
        mean = pts.mean(axis=0)
        cov = (pts - mean).T @ (pts - mean) / pts.shape[0]
        floor = max(1e-8 * float(np.trace(cov)) / d, 1e-12 * scale)
        comps.append(GaussianComponent(pts.shape[0] / n, mean, floor_covariance(cov, floor)))
    return comps, assign


def min_fit_points(d: int) -> int:
    """Fewest points ``fit_gmm`` accepts in dimension ``d``."""
    return 2 * (d + 1)


def fit_gmm(
    positions: np.ndarray,
    velocities: np.ndarray,
    k_max: int,
    seed: int,
    beta: float | None = None,
    trajectory_labels: np.ndarray | None = None,
    n_restarts: int = 5,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> MixtureFit:
    """Cluster reference points with EM on position + scaled velocity
    direction, choosing K in ``1..k_max`` by BIC.

    Returned components are re-estimated on positions only from the hard
    (argmax) assignments; components left with fewer than ``d + 1`` points
    are dissolved into their neighbours.
    """
    X = np.asarray(positions, dtype=float)
    V = np.asarray(velocities, dtype=float)
    n, d = X.shape
    if V.shape != X.shape:
        raise DimensionMismatch("positions and velocities must have the same shape")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if n < min_fit_points(d):
        raise TooFewPoints(f"need at least {min_fit_points(d)} points, got {n}")
    if np.all(np.ptp(X, axis=0) == 0):
        raise DegenerateData("all positions are identical")

    order = canonical_order(X, V)
    Xs, Vs = X[order], V[order]
    labels_s = None if trajectory_labels is None else np.asarray(trajectory_labels)[order]
    if beta is None:
        beta = default_direction_scale(Xs, labels_s)
    Z = direction_features(Xs, Vs, beta)
    D = Z.shape[1]
    floor = 1e-8 * float(np.trace(np.cov(Z.T, bias=True))) / D
    k_max = min(k_max, n // (d + 1))

    rng = np.random.default_rng(seed)
    best: dict[int, tuple[float, np.ndarray]] = {}
    bic = {}
    for k in range(1, k_max + 1):
        runs = [_em_run(Z, k, rng, floor, max_iter, tol) for _ in range(n_restarts if k > 1 else 1)]
        ll, resp, _ = max(runs, key=lambda r: r[0])
        n_params = (k - 1) + k * D + k * D * (D + 1) // 2
        bic[k] = -2.0 * ll + n_params * np.log(n)
        best[k] = (ll, resp)
    k_best = min(bic, key=lambda k: (bic[k], k))
    comps, assign_s = _hard_components(Xs, best[k_best][1], d)
    assignments = np.empty(n, dtype=int)
    assignments[order] = assign_s
    return MixtureFit(tuple(comps), assignments, bic)


def mixture_from_clusters(
    components: list[GaussianComponent], assignments: np.ndarray
) -> MixtureFit:
    """Wrap given components (priors renormalized to sum to one) and a
    precomputed hard assignment."""
    total = sum(c.prior for c in components)
    comps = tuple(c.with_prior(c.prior / total) for c in components)
    return MixtureFit(comps, assignments)
