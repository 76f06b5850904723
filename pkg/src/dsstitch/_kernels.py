"""Compiled inner loops for policy evaluation and Euler rollouts.

The arithmetic mirrors :func:`dsstitch.gmm.posteriors` and
:func:`dsstitch.lpvds.evaluate` (including the underflow fallback) so both
paths agree to rounding error.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

UNDERFLOW_LOG = math.log(1e-300)


class PolicyPack(NamedTuple):
    means: np.ndarray  # (K, d)
    chols: np.ndarray  # (K, d, d) lower Cholesky factors of the covariances
    log_weights: np.ndarray  # (K,) log prior + log normalizer
    dynamics: np.ndarray  # (K, d, d)
    attractor: np.ndarray  # (d,)


def pack_policy(policy) -> PolicyPack:
    K = policy.n_components
    with np.errstate(divide="ignore"):
        logw = np.array([math.log(c.prior) if c.prior > 0 else -np.inf for c in policy.components])
    return PolicyPack(
        np.ascontiguousarray([c.mean for c in policy.components], dtype=float).reshape(K, -1),
        np.ascontiguousarray([c.precision_cholesky for c in policy.components], dtype=float),
        logw + np.array([c.log_norm for c in policy.components]),
        np.ascontiguousarray(policy.dynamics, dtype=float),
        np.ascontiguousarray(policy.attractor, dtype=float),
    )


@njit(cache=True)
def lpv_velocity(x, means, chols, log_weights, dynamics, attractor, out):
    K, d = means.shape
    logw = np.empty(K)
    maha = np.empty(K)
    z = np.empty(d)
    for k in range(K):
        # forward substitution L z = x - mu
        s = 0.0
        for i in range(d):
            acc = x[i] - means[k, i]
            for j in range(i):
                acc -= chols[k, i, j] * z[j]
            z[i] = acc / chols[k, i, i]
            s += z[i] * z[i]
        maha[k] = s
        logw[k] = log_weights[k] - 0.5 * s
    top = logw[0]
    for k in range(1, K):
        if logw[k] > top:
            top = logw[k]
    gamma = np.zeros(K)
    if not (top >= UNDERFLOW_LOG):
        best = 0
        for k in range(1, K):
            if maha[k] < maha[best]:
                best = k
        gamma[best] = 1.0
    else:
        total = 0.0
        for k in range(K):
            gamma[k] = math.exp(logw[k] - top)
            total += gamma[k]
        for k in range(K):
            gamma[k] /= total
    for i in range(d):
        out[i] = 0.0
    for k in range(K):
        g = gamma[k]
        if g == 0.0:
            continue
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += dynamics[k, i, j] * (x[j] - attractor[j])
            out[i] += g * acc


@njit(cache=True)
def _cap(v, v_max):
    if v_max > 0.0:
        s = 0.0
        for i in range(v.shape[0]):
            s += v[i] * v[i]
        s = math.sqrt(s)
        if s > v_max:
            for i in range(v.shape[0]):
                v[i] *= v_max / s


@njit(cache=True)
def rollout(x0, goal, dt, n_steps, eps_goal, v_max, means, chols, log_weights, dynamics, attractor):
    """Euler integration; returns (positions, velocities, n_samples, success)."""
    d = x0.shape[0]
    pos = np.empty((n_steps + 1, d))
    vel = np.empty((n_steps + 1, d))
    x = x0.copy()
    v = np.empty(d)
    for step in range(n_steps + 1):
        lpv_velocity(x, means, chols, log_weights, dynamics, attractor, v)
        _cap(v, v_max)
        pos[step] = x
        vel[step] = v
        dist = 0.0
        for i in range(d):
            dist += (x[i] - goal[i]) ** 2
        if math.sqrt(dist) < eps_goal:
            return pos, vel, step + 1, True
        if step == n_steps:
            break
        for i in range(d):
            x[i] += dt * v[i]
    return pos, vel, n_steps + 1, False


@njit(cache=True)
def rollout_endpoints(starts, goal, dt, n_steps, eps_goal, v_max, means, chols, log_weights, dynamics, attractor):
    """Batch rollouts recording only success and time-to-goal."""
    n, d = starts.shape
    success = np.zeros(n, dtype=np.bool_)
    times = np.full(n, np.nan)
    finals = np.empty((n, d))
    v = np.empty(d)
    for r in range(n):
        x = starts[r].copy()
        for step in range(n_steps + 1):
            dist = 0.0
            for i in range(d):
                dist += (x[i] - goal[i]) ** 2
            if math.sqrt(dist) < eps_goal:
                success[r] = True
                times[r] = step * dt
                break
            if step == n_steps:
                break
            lpv_velocity(x, means, chols, log_weights, dynamics, attractor, v)
            _cap(v, v_max)
            for i in range(d):
                x[i] += dt * v[i]
        finals[r] = x
    return success, times, finals


@njit(cache=True)
def trigger_fired(a, b, c, x):
    """Cross-multiplied form of the passage test: exact equality at ``x = b``
    and true at ``x = c``."""
    d = x.shape[0]
    xa = 0.0
    xc = 0.0
    ba = 0.0
    bc = 0.0
    for i in range(d):
        xa += (x[i] - a[i]) ** 2
        xc += (x[i] - c[i]) ** 2
        ba += (b[i] - a[i]) ** 2
        bc += (b[i] - c[i]) ** 2
    return math.sqrt(xa) * math.sqrt(bc) >= math.sqrt(ba) * math.sqrt(xc)


@njit(cache=True)
def _chain_velocity(mode, elapsed, x, means, chols, logw, dyn, attrs, offsets, timers, out, tmp):
    i = mode // 2
    lo, hi = offsets[i], offsets[i + 1]
    lpv_velocity(x, means[lo:hi], chols[lo:hi], logw[lo:hi], dyn[lo:hi], attrs[i], out)
    if mode % 2 == 1:
        T = timers[i]
        lo, hi = offsets[i + 1], offsets[i + 2]
        lpv_velocity(x, means[lo:hi], chols[lo:hi], logw[lo:hi], dyn[lo:hi], attrs[i + 1], tmp)
        s = 1.0 if T == 0.0 else min(elapsed / T, 1.0)
        for k in range(x.shape[0]):
            out[k] = (1.0 - s) * out[k] + s * tmp[k]


@njit(cache=True)
def _advance(mode, entry, t, x, n_policies, anchors, timers):
    """Apply every transition enabled at (x, t); returns the new mode and
    entry time. Transitions cascade within a single instant."""
    while mode < 2 * (n_policies - 1):
        i = mode // 2
        if mode % 2 == 0:
            if trigger_fired(anchors[i, 0], anchors[i, 1], anchors[i, 2], x):
                mode += 1
                entry = t
                continue
        elif t - entry >= timers[i]:
            mode += 1
            entry = t
            continue
        break
    return mode, entry


@njit(cache=True)
def rollout_chain(
    x0, goal, dt, n_steps, eps_goal, v_max, means, chols, logw, dyn, attrs, offsets, anchors, timers
):
    """Euler rollout of a DS-Chain; returns positions, velocities, per-sample
    modes, the entered-mode trace, sample count and success."""
    n_policies = offsets.shape[0] - 1
    d = x0.shape[0]
    pos = np.empty((n_steps + 1, d))
    vel = np.empty((n_steps + 1, d))
    modes = np.empty(n_steps + 1, dtype=np.int64)
    trace = np.empty(2 * n_policies - 1, dtype=np.int64)
    trace[0] = 0
    n_trace = 1
    x = x0.copy()
    v = np.empty(d)
    tmp = np.empty(d)
    mode = 0
    entry = 0.0
    for step in range(n_steps + 1):
        t = step * dt
        new_mode, entry = _advance(mode, entry, t, x, n_policies, anchors, timers)
        for m in range(mode + 1, new_mode + 1):
            trace[n_trace] = m
            n_trace += 1
        mode = new_mode
        _chain_velocity(mode, t - entry, x, means, chols, logw, dyn, attrs, offsets, timers, v, tmp)
        _cap(v, v_max)
        pos[step] = x
        vel[step] = v
        modes[step] = mode
        dist = 0.0
        for i in range(d):
            dist += (x[i] - goal[i]) ** 2
        if math.sqrt(dist) < eps_goal:
            return pos, vel, modes, trace, n_trace, step + 1, True
        if step == n_steps:
            break
        for i in range(d):
            x[i] += dt * v[i]
    return pos, vel, modes, trace, n_trace, n_steps + 1, False


@njit(cache=True)
def steps_until_trigger(x0, a, b, c, dt, n_steps, v_max, means, chols, log_weights, dynamics, attractor):
    """Euler steps of one policy until the trigger ``(a, b, c)`` fires; -1 if
    it does not fire within ``n_steps``."""
    x = x0.copy()
    v = np.empty(x.shape[0])
    for step in range(n_steps + 1):
        if trigger_fired(a, b, c, x):
            return step
        lpv_velocity(x, means, chols, log_weights, dynamics, attractor, v)
        _cap(v, v_max)
        for i in range(x.shape[0]):
            x[i] += dt * v[i]
    return -1


# ---------------------------------------------------------------------------
# EM on a fixed number of components


@njit(cache=True)
def _floor_cov(cov, floor):
    D = cov.shape[0]
    sym = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(sym)
    if w.min() >= floor:
        return sym
    for i in range(D):
        if w[i] < floor:
            w[i] = floor
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


@njit(cache=True)
def _e_step(Z, weights, means, covs, logw):
    n, D = Z.shape
    k = weights.shape[0]
    z = np.empty(D)
    for j in range(k):
        L = np.linalg.cholesky(covs[j])
        logdet = 0.0
        for a in range(D):
            logdet += math.log(L[a, a])
        lw = np.log(weights[j]) - logdet - 0.5 * D * math.log(2.0 * math.pi)
        for i in range(n):
            s = 0.0
            for a in range(D):
                acc = Z[i, a] - means[j, a]
                for b in range(a):
                    acc -= L[a, b] * z[b]
                z[a] = acc / L[a, a]
                s += z[a] * z[a]
            logw[i, j] = lw - 0.5 * s
    ll = 0.0
    norm = np.empty(n)
    for i in range(n):
        top = logw[i, 0]
        for j in range(1, k):
            if logw[i, j] > top:
                top = logw[i, j]
        acc = 0.0
        for j in range(k):
            acc += math.exp(logw[i, j] - top)
        norm[i] = top + math.log(acc)
        ll += norm[i]
    return ll, norm


@njit(cache=True)
def _m_step(Z, resp, floor, means, covs):
    n, D = Z.shape
    k = resp.shape[1]
    weights = np.empty(k)
    for j in range(k):
        nk = 0.0
        for i in range(n):
            nk += resp[i, j]
        weights[j] = nk / n
        if nk < 1e-10:
            continue
        mu = np.zeros(D)
        for i in range(n):
            for a in range(D):
                mu[a] += resp[i, j] * Z[i, a]
        mu /= nk
        cov = np.zeros((D, D))
        for i in range(n):
            r = resp[i, j]
            for a in range(D):
                da = Z[i, a] - mu[a]
                for b in range(D):
                    cov[a, b] += r * da * (Z[i, b] - mu[b])
        means[j] = mu
        covs[j] = _floor_cov(cov / nk, floor)
    return weights


@njit(cache=True)
def em_loop(Z, resp, means, covs, floor, max_iter, tol):
    """M-step from ``resp`` then alternate E/M until the log-likelihood gain
    drops below ``tol * n``. Returns (ll, resp, history, n_history, ok);
    ``ok`` is False if the likelihood decreased."""
    n = Z.shape[0]
    k = resp.shape[1]
    weights = _m_step(Z, resp, floor, means, covs)
    logw = np.empty((n, k))
    history = np.empty(max_iter)
    prev = -np.inf
    ll = -np.inf
    count = 0
    for _ in range(max_iter):
        ll, norm = _e_step(Z, weights, means, covs, logw)
        history[count] = ll
        count += 1
        if ll < prev - 1e-8 * (abs(prev) + 1.0):
            return ll, resp, history, count, False
        for i in range(n):
            for j in range(k):
                resp[i, j] = math.exp(logw[i, j] - norm[i])
        if ll - prev < tol * n:
            break
        prev = ll
        weights = _m_step(Z, resp, floor, means, covs)
    return ll, resp, history, count, True


@njit(cache=True)
def velocity_loss(Xt, V, gamma, A):
    """Mean squared error of ``sum_k gamma_k A_k x`` against ``V`` and its
    gradient with respect to each ``A_k``."""
    n, d = Xt.shape
    K = gamma.shape[1]
    gA = np.zeros((K, d, d))
    r = np.empty(d)
    J = 0.0
    for i in range(n):
        for a in range(d):
            acc = -V[i, a]
            for k in range(K):
                g = gamma[i, k]
                if g == 0.0:
                    continue
                s = 0.0
                for b in range(d):
                    s += A[k, a, b] * Xt[i, b]
                acc += g * s
            r[a] = acc
            J += acc * acc
        for k in range(K):
            g = gamma[i, k]
            if g == 0.0:
                continue
            for a in range(d):
                ga = g * r[a]
                for b in range(d):
                    gA[k, a, b] += ga * Xt[i, b]
    return J / n, gA * (2.0 / n)


@njit(cache=True)
def stable_objective(theta, Xt, V, gamma, delta, eps_p):
    """Objective and gradient of the stability-by-construction fit; the
    parameter layout is ``L`` (lower triangle, row-major) followed by, per
    component, the strict lower triangle of ``T_k`` and ``B_k`` (row-major)."""
    n, d = Xt.shape
    K = gamma.shape[1]
    L = np.zeros((d, d))
    off = 0
    for i in range(d):
        for j in range(i + 1):
            L[i, j] = theta[off]
            off += 1
    T = np.zeros((K, d, d))
    B = np.empty((K, d, d))
    for k in range(K):
        for i in range(d):
            for j in range(i):
                T[k, i, j] = theta[off]
                off += 1
        for i in range(d):
            for j in range(d):
                B[k, i, j] = theta[off]
                off += 1
    P = L @ L.T
    for i in range(d):
        P[i, i] += eps_p
    trP = 0.0
    for i in range(d):
        trP += P[i, i]
    Pinv = np.linalg.inv(P)
    A = np.empty((K, d, d))
    for k in range(K):
        M = T[k] - T[k].T - B[k] @ B[k].T
        for i in range(d):
            M[i, i] -= delta * trP / d
        A[k] = Pinv @ M
    J, gA = velocity_loss(Xt, V, gamma, A)
    H = np.zeros((d, d))
    trace_gM = 0.0
    grad = np.empty(theta.shape[0])
    gMs = np.empty((K, d, d))
    for k in range(K):
        gM = Pinv.T @ gA[k]
        gMs[k] = gM
        H -= gM @ A[k].T
        for i in range(d):
            trace_gM += gM[i, i]
    for i in range(d):
        H[i, i] -= delta / d * trace_gM
    gL = (H + H.T) @ L
    off = 0
    for i in range(d):
        for j in range(i + 1):
            grad[off] = gL[i, j]
            off += 1
    for k in range(K):
        gM = gMs[k]
        for i in range(d):
            for j in range(i):
                grad[off] = gM[i, j] - gM[j, i]
                off += 1
        gB = -(gM + gM.T) @ B[k]
        for i in range(d):
            for j in range(d):
                grad[off] = gB[i, j]
                off += 1
    return J, grad
