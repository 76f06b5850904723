"""Linear parameter-varying dynamical systems: a GMM-blended family of linear
systems sharing one quadratic Lyapunov function.

Stability is built into the parameterization rather than imposed as a
constraint::

    P   = L L^T + eps_P I                         (L lower triangular)
    M_k = S_k - (B_k B_k^T + delta tr(P)/d I)     (S_k skew-symmetric)
    A_k = P^{-1} M_k

so ``A_k^T P + P A_k = -2 (B_k B_k^T + delta tr(P)/d I)`` is negative
definite for any parameter values and the fit is an unconstrained smooth
problem. ``A_k`` is unchanged by scaling ``P, S_k, B_k B_k^T`` together, so
the margin is tied to ``tr(P)``; the stored ``P`` is rescaled to trace ``d``,
which makes ``V = x^T P x`` decay at least at rate ``2 delta / d``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .errors import DimensionMismatch, OptimizationDiverged, StabilityUnsatisfied
from .gmm import GaussianComponent, MixtureFit, canonical_order, fit_gmm, mixture_from_clusters, posteriors

FORMAT_VERSION = 1
EPS_P = 1e-6
DEFAULT_MARGIN = 0.1
VERIFY_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class StablePolicy:
    components: tuple[GaussianComponent, ...]
    dynamics: np.ndarray
    lyapunov: np.ndarray
    attractor: np.ndarray
    margin: float = 0.0

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        A = np.array(self.dynamics, dtype=float)
        P = np.array(self.lyapunov, dtype=float)
        att = np.array(self.attractor, dtype=float).reshape(-1)
        d = att.size
        if A.shape != (len(comps), d, d) or P.shape != (d, d):
            raise DimensionMismatch(
                f"dynamics {A.shape} / lyapunov {P.shape} inconsistent with "
                f"{len(comps)} components in dimension {d}"
            )
        for arr in (A, P, att):
            arr.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "dynamics", A)
        object.__setattr__(self, "lyapunov", P)
        object.__setattr__(self, "attractor", att)

    @property
    def dimension(self) -> int:
        return self.attractor.size

    @property
    def n_components(self) -> int:
        return len(self.components)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return evaluate(self, x)

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "dimension": self.dimension,
            "attractor": self.attractor.tolist(),
            "components": [c.to_dict() for c in self.components],
            "dynamics": self.dynamics.tolist(),
            "lyapunov": self.lyapunov.tolist(),
            "margin": self.margin,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "StablePolicy":
        if raw.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {raw.get('version')!r}")
        return cls(
            tuple(GaussianComponent.from_dict(c) for c in raw["components"]),
            np.array(raw["dynamics"], dtype=float),
            np.array(raw["lyapunov"], dtype=float),
            np.array(raw["attractor"], dtype=float),
            float(raw.get("margin", 0.0)),
        )

    def with_attractor(self, attractor: np.ndarray) -> "StablePolicy":
        return StablePolicy(self.components, self.dynamics, self.lyapunov, attractor, self.margin)


@dataclass
class FitReport:
    objective: float
    iterations: int
    margins: list[float]
    wall_time: float
    lyapunov_min_eig: float = float("nan")
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "iterations": self.iterations,
            "margins": self.margins,
            "wall_time": self.wall_time,
            "lyapunov_min_eig": self.lyapunov_min_eig,
            "converged": self.converged,
        }


@dataclass
class StabilityReport:
    margins: list[float]
    lyapunov_min_eig: float
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.passed = bool(
            self.lyapunov_min_eig > 0
            and all(np.isfinite(m) and m < -self.tolerance for m in self.margins)
        )


def evaluate(policy: StablePolicy, x: np.ndarray) -> np.ndarray:
    """Blended velocity ``sum_k gamma_k(x) A_k (x - x*)`` for one point or an
    (n, d) batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != policy.dimension:
        raise DimensionMismatch(f"state of dimension {x.shape[-1]} for a {policy.dimension}-d policy")
    single = x.ndim == 1
    X = np.atleast_2d(x)
    gamma = posteriors(policy.components, X)
    Xt = X - policy.attractor
    AX = np.einsum("kij,nj->nki", policy.dynamics, Xt)
    out = np.einsum("nk,nki->ni", gamma, AX)
    return out[0] if single else out


def lyapunov_derivative(policy: StablePolicy, x: np.ndarray) -> np.ndarray:
    """``dV/dt`` of ``V = (x - x*)^T P (x - x*)`` along the policy."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Xt = X - policy.attractor
    return 2.0 * np.einsum("ni,ij,nj->n", Xt, policy.lyapunov, evaluate(policy, X))


def verify_stability(policy: StablePolicy, tolerance: float = VERIFY_TOLERANCE) -> StabilityReport:
    P = policy.lyapunov
    sym_err = float(np.max(np.abs(P - P.T))) if P.size else 0.0
    p_min = float(np.linalg.eigvalsh(0.5 * (P + P.T)).min())
    if sym_err > 1e-10:
        p_min = min(p_min, -sym_err)
    margins = []
    for A in policy.dynamics:
        Q = A.T @ P + P @ A
        margins.append(float(np.linalg.eigvalsh(0.5 * (Q + Q.T)).max()))
    return StabilityReport(margins, p_min, tolerance)


# ---------------------------------------------------------------------------
# fitting


def _tril(d: int, strict: bool) -> tuple[np.ndarray, np.ndarray]:
    return np.tril_indices(d, -1 if strict else 0)


def n_parameters(d: int, K: int) -> int:
    return d * (d + 1) // 2 + K * (d * (d - 1) // 2 + d * d)


def initial_parameters(d: int, K: int) -> np.ndarray:
    """``L = I``, ``B_k = I``, ``S_k = 0``."""
    L = np.eye(d)[_tril(d, False)]
    block = np.concatenate([np.zeros(d * (d - 1) // 2), np.eye(d).ravel()])
    return np.concatenate([L] + [block] * K)


def unpack(theta: np.ndarray, d: int, K: int):
    il, sl = _tril(d, False), _tril(d, True)
    nl, ns = len(il[0]), len(sl[0])
    L = np.zeros((d, d))
    L[il] = theta[:nl]
    T = np.zeros((K, d, d))
    B = np.empty((K, d, d))
    off = nl
    for k in range(K):
        T[k][sl] = theta[off : off + ns]
        off += ns
        B[k] = theta[off : off + d * d].reshape(d, d)
        off += d * d
    return L, T, B


def build_matrices(theta: np.ndarray, d: int, K: int, delta: float, eps_p: float = EPS_P):
    L, T, B = unpack(theta, d, K)
    P = L @ L.T + eps_p * np.eye(d)
    S = T - np.transpose(T, (0, 2, 1))
    M = S - B @ np.transpose(B, (0, 2, 1)) - (delta * np.trace(P) / d) * np.eye(d)
    A = np.linalg.solve(P[None], M)
    return L, B, P, M, A


def objective_and_gradient(
    theta: np.ndarray,
    Xt: np.ndarray,
    V: np.ndarray,
    gamma: np.ndarray,
    delta: float,
    eps_p: float = EPS_P,
) -> tuple[float, np.ndarray]:
    """Mean squared velocity error and its gradient w.r.t. ``theta``.

    ``Xt`` holds positions relative to the attractor, ``gamma`` the (n, K)
    posteriors, which are fixed during the fit.
    """
    return _kernels.stable_objective(
        np.ascontiguousarray(theta, dtype=float),
        np.ascontiguousarray(Xt, dtype=float),
        np.ascontiguousarray(V, dtype=float),
        np.ascontiguousarray(gamma, dtype=float),
        float(delta),
        float(eps_p),
    )


def margin_for(
    positions: np.ndarray, velocities: np.ndarray, attractor: np.ndarray, rel: float, speed: float | None = None
) -> float:
    """Stability margin ``delta`` scaled to a characteristic rate: reference
    speed (default: the data's mean speed) over the mean distance to the
    attractor."""
    dist = float(np.mean(np.linalg.norm(positions - attractor, axis=1)))
    if speed is None:
        speed = float(np.mean(np.linalg.norm(velocities, axis=1)))
    rate = speed / dist if dist > 0 else 0.0
    return rel * max(rate, 1e-6)


def fit_ds_given_gmm(
    mixture: MixtureFit,
    positions: np.ndarray,
    velocities: np.ndarray,
    attractor: np.ndarray,
    margin_rel: float = DEFAULT_MARGIN,
    max_iter: int = 500,
    gtol: float = 1e-8,
    speed: float | None = None,
) -> tuple[StablePolicy, FitReport]:
    """Fit the linear systems and shared Lyapunov matrix for a fixed GMM."""
    t0 = time.perf_counter()
    X = np.asarray(positions, dtype=float)
    V = np.asarray(velocities, dtype=float)
    attractor = np.asarray(attractor, dtype=float).reshape(-1)
    n, d = X.shape
    if attractor.size != d or V.shape != X.shape:
        raise DimensionMismatch("positions, velocities and attractor disagree in shape")
    total = sum(c.prior for c in mixture.components)
    comps = tuple(c.with_prior(c.prior / total) for c in mixture.components)
    K = len(comps)
    order = canonical_order(X, V)
    X, V = X[order], V[order]
    gamma = np.ascontiguousarray(posteriors(comps, X))
    Xt = np.ascontiguousarray(X - attractor)
    V = np.ascontiguousarray(V)
    delta = margin_for(X, V, attractor, margin_rel, speed)
    res = minimize(
        objective_and_gradient,
        initial_parameters(d, K),
        args=(Xt, V, gamma, delta),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": gtol, "ftol": 0.0, "maxcor": 20},
    )
    if not np.isfinite(res.fun) or not np.all(np.isfinite(res.x)):
        raise OptimizationDiverged("non-finite objective during dynamics fit")
    _, _, P, _, A = build_matrices(res.x, d, K, delta)
    P = 0.5 * (P + P.T)
    P *= d / np.trace(P)
    policy = StablePolicy(comps, A, P, attractor, delta)
    check = verify_stability(policy, tolerance=delta)
    if not check.passed:
        raise StabilityUnsatisfied(
            f"fitted policy violates the Lyapunov condition: margins {check.margins}, "
            f"min eig(P) {check.lyapunov_min_eig}"
        )
    report = FitReport(
        objective=float(res.fun),
        iterations=int(res.nit),
        margins=check.margins,
        wall_time=time.perf_counter() - t0,
        lyapunov_min_eig=check.lyapunov_min_eig,
        converged=bool(res.success),
    )
    return policy, report


def fit_lpvds(
    positions: np.ndarray,
    velocities: np.ndarray,
    attractor: np.ndarray,
    k_max: int,
    seed: int,
    trajectory_labels: np.ndarray | None = None,
    beta: float | None = None,
    margin_rel: float = DEFAULT_MARGIN,
    speed: float | None = None,
    n_restarts: int = 5,
) -> tuple[StablePolicy, MixtureFit, FitReport]:
    t0 = time.perf_counter()
    mixture = fit_gmm(
        positions, velocities, k_max, seed, beta=beta, trajectory_labels=trajectory_labels, n_restarts=n_restarts
    )
    policy, report = fit_ds_given_gmm(
        mixture, positions, velocities, attractor, margin_rel=margin_rel, speed=speed
    )
    report.wall_time = time.perf_counter() - t0
    return policy, mixture, report


def fit_demonstrations(
    dataset, seed: int, k_max: int = 10, margin_rel: float = DEFAULT_MARGIN
) -> list[tuple[StablePolicy, MixtureFit, FitReport, str]]:
    """One policy per demonstration, stable at that demonstration's attractor."""
    out = []
    for demo in dataset:
        policy, mixture, report = fit_lpvds(
            demo.positions,
            demo.velocities,
            demo.attractor,
            k_max,
            seed,
            trajectory_labels=demo.trajectory_labels,
            margin_rel=margin_rel,
        )
        out.append((policy, mixture, report, demo.id))
    return out


__all__ = [
    "FitReport",
    "StabilityReport",
    "StablePolicy",
    "evaluate",
    "fit_demonstrations",
    "fit_ds_given_gmm",
    "fit_lpvds",
    "lyapunov_derivative",
    "mixture_from_clusters",
    "objective_and_gradient",
    "verify_stability",
]
