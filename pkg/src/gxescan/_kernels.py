"""Numba kernels for the coordinate-descent solvers.

These are the hot loops behind `robust.cd_mm_fit`, `baselines.wls_lasso_fit`
and `baselines.quantile_lasso_fit`.  They operate on normalized data and
update residuals incrementally.  All public-facing validation, loss and
gradient definitions live in the wrapping modules; `kkt_check` there
recomputes gradients in numpy, so every converged kernel result is
cross-checked against an independent code path.
"""

import numpy as np
from numba import njit

# status codes shared by the kernels
OK = 0
DIVERGED = 1

_INNER_CAP = 100  # safety cap on repeated updates of a single coordinate


@njit(cache=True, nogil=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True, nogil=True)
def exp_sq_q(y, U, w, theta, zeta):
    n = y.shape[0]
    q = 0.0
    for i in range(n):
        r = y[i]
        for k in range(zeta.shape[0]):
            r -= U[i, k] * zeta[k]
        q += w[i] * np.exp(-r * r / theta)
    return q


@njit(cache=True, nogil=True)
def _l1(zeta, active):
    s = 0.0
    for k in range(zeta.shape[0]):
        if active[k]:
            s += abs(zeta[k])
    return s


@njit(cache=True, nogil=True)
def _robust_kkt(r, U, w, active, zeta, lam, theta):
    # max over active coordinates of the subgradient stationarity violation
    n, d = U.shape
    worst = 0.0
    for k in range(d):
        if not active[k]:
            continue
        g = 0.0
        for i in range(n):
            g += w[i] * U[i, k] * r[i] * np.exp(-r[i] * r[i] / theta)
        g = 2.0 * g / theta
        if zeta[k] != 0.0:
            v = abs(g - lam * np.sign(zeta[k]))
        else:
            v = abs(g) - lam
            if v < 0.0:
                v = 0.0
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def cd_mm(y, U, w, lam, theta, zeta, active,
          inner_tol, outer_tol, max_sweeps, kkt_tol, objective_trace):
    """Coordinate descent with the minorizing curvature for the
    exponential squared loss; maximizes sum(w*exp(-r^2/theta)) - lam*|zeta|_1.

    zeta is updated in place.  objective_trace (length >= max_sweeps)
    receives the penalized objective after each completed sweep.
    Returns (status, sweeps, converged, kkt_residual, objective).
    """
    n, d = U.shape
    r = y.copy()
    for i in range(n):
        for k in range(d):
            r[i] -= U[i, k] * zeta[k]

    sweeps = 0
    converged = False
    kkt = np.inf
    obj = -np.inf
    while sweeps < max_sweeps:
        sweeps += 1
        move_sq = 0.0
        for k in range(d):
            if not active[k]:
                continue
            zk_start = zeta[k]
            for _ in range(_INNER_CAP):
                g = 0.0
                a = 0.0
                for i in range(n):
                    e = np.exp(-r[i] * r[i] / theta)
                    uw = w[i] * U[i, k] * e
                    g += uw * r[i]
                    a += uw * U[i, k]
                g = 2.0 * g / theta          # first derivative of Q
                a = 2.0 * a / theta          # -Q''_kk of the minorant (>= 0)
                if a <= 0.0 or not np.isfinite(a):
                    break
                znew = _soft(zeta[k] + g / a, lam / a)
                step = znew - zeta[k]
                if step != 0.0:
                    for i in range(n):
                        r[i] -= U[i, k] * step
                    zeta[k] = znew
                if abs(step) <= inner_tol:
                    break
            dz = zeta[k] - zk_start
            move_sq += dz * dz

        obj = exp_sq_q(y, U, w, theta, zeta) - lam * _l1(zeta, active)
        objective_trace[sweeps - 1] = obj
        if not np.isfinite(obj):
            return DIVERGED, sweeps, False, np.inf, obj

        if np.sqrt(move_sq) <= outer_tol:
            kkt = _robust_kkt(r, U, w, active, zeta, lam, theta)
            if kkt <= kkt_tol:
                converged = True
                break
            if move_sq == 0.0:
                break  # stalled: no coordinate can move, leave unconverged

    if not converged and np.isinf(kkt):
        kkt = _robust_kkt(r, U, w, active, zeta, lam, theta)
    return OK, sweeps, converged, kkt, obj


@njit(cache=True, nogil=True)
def _score_kkt(scores, zeta, active, lam):
    # stationarity violation for objectives with score s_k = -d(loss)/d(zeta_k)
    worst = 0.0
    for k in range(zeta.shape[0]):
        if not active[k]:
            continue
        if zeta[k] != 0.0:
            v = abs(scores[k] - lam * np.sign(zeta[k]))
        else:
            v = abs(scores[k]) - lam
            if v < 0.0:
                v = 0.0
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def wls_cd(y, U, w, lam, zeta, active, kkt_tol, max_sweeps):
    """Cyclic coordinate descent for 0.5*sum(w*r^2) + lam*|zeta|_1.

    Exact per-coordinate soft-threshold updates; convex, so iteration
    runs until the KKT residual is below kkt_tol and the sweep movement
    has hit float-level stagnation (tight solutions keep warm/cold
    starts and the closed-form solution in agreement).
    Returns (sweeps, converged, kkt_residual, objective).
    """
    n, d = U.shape
    r = y.copy()
    for i in range(n):
        for k in range(d):
            r[i] -= U[i, k] * zeta[k]

    a = np.zeros(d)
    for k in range(d):
        s = 0.0
        for i in range(n):
            s += w[i] * U[i, k] * U[i, k]
        a[k] = s

    scores = np.zeros(d)
    sweeps = 0
    converged = False
    kkt = np.inf
    while sweeps < max_sweeps:
        sweeps += 1
        move = 0.0
        scale = 0.0
        for k in range(d):
            if not active[k] or a[k] <= 0.0:
                continue
            s = 0.0
            for i in range(n):
                s += w[i] * U[i, k] * r[i]
            znew = _soft(zeta[k] + s / a[k], lam / a[k])
            step = znew - zeta[k]
            if step != 0.0:
                for i in range(n):
                    r[i] -= U[i, k] * step
                zeta[k] = znew
            if abs(step) > move:
                move = abs(step)
            if abs(zeta[k]) > scale:
                scale = abs(zeta[k])
        if move > 1e-13 * (1.0 + scale):
            continue
        for k in range(d):
            s = 0.0
            for i in range(n):
                s += w[i] * U[i, k] * r[i]
            scores[k] = s
        kkt = _score_kkt(scores, zeta, active, lam)
        if kkt <= kkt_tol:
            converged = True
            break

    if np.isinf(kkt):
        for k in range(d):
            s = 0.0
            for i in range(n):
                s += w[i] * U[i, k] * r[i]
            scores[k] = s
        kkt = _score_kkt(scores, zeta, active, lam)
        converged = kkt <= kkt_tol
    obj = 0.0
    for i in range(n):
        obj += 0.5 * w[i] * r[i] * r[i]
    obj += lam * _l1(zeta, active)
    return sweeps, converged, kkt, obj


@njit(cache=True, nogil=True)
def smoothed_check_psi(r, tau, h):
    # derivative of the smoothed check loss (uniform-kernel convolution)
    t = r / (2.0 * h)
    if t > 0.5:
        t = 0.5
    elif t < -0.5:
        t = -0.5
    return (tau - 0.5) + t


@njit(cache=True, nogil=True)
def smoothed_check_loss(r, tau, h):
    # quadratic inside |r| < h, check loss plus constant h/4 outside
    if abs(r) < h:
        core = r * r / (4.0 * h) + h / 4.0
    else:
        core = 0.5 * abs(r)
    return (tau - 0.5) * r + core


@njit(cache=True, nogil=True)
def sqr_cd(y, U, w, lam, tau, h, zeta, active, inner_tol, kkt_tol, max_sweeps):
    """Majorized coordinate descent for the smoothed-check-loss lasso:
    minimize sum(w * smoothed_check(r)) + lam*|zeta|_1.

    The per-coordinate curvature bound sum(w*u_k^2)/(2h) majorizes the
    loss, so every update is a descent step.
    Returns (sweeps, converged, kkt_residual, objective).
    """
    n, d = U.shape
    r = y.copy()
    for i in range(n):
        for k in range(d):
            r[i] -= U[i, k] * zeta[k]

    a = np.zeros(d)
    for k in range(d):
        s = 0.0
        for i in range(n):
            s += w[i] * U[i, k] * U[i, k]
        a[k] = s / (2.0 * h)

    scores = np.zeros(d)
    sweeps = 0
    converged = False
    kkt = np.inf
    while sweeps < max_sweeps:
        sweeps += 1
        move = 0.0
        for k in range(d):
            if not active[k] or a[k] <= 0.0:
                continue
            step = 0.0
            for _ in range(_INNER_CAP):
                s = 0.0
                for i in range(n):
                    s += w[i] * U[i, k] * smoothed_check_psi(r[i], tau, h)
                znew = _soft(zeta[k] + s / a[k], lam / a[k])
                step = znew - zeta[k]
                if step != 0.0:
                    for i in range(n):
                        r[i] -= U[i, k] * step
                    zeta[k] = znew
                if abs(step) <= inner_tol:
                    break
            if abs(step) > move:
                move = abs(step)
        for k in range(d):
            s = 0.0
            for i in range(n):
                s += w[i] * U[i, k] * smoothed_check_psi(r[i], tau, h)
            scores[k] = s
        kkt = _score_kkt(scores, zeta, active, lam)
        if kkt <= kkt_tol:
            converged = True
            break
        if move == 0.0:
            break

    obj = 0.0
    for i in range(n):
        obj += w[i] * smoothed_check_loss(r[i], tau, h)
    obj += lam * _l1(zeta, active)
    return sweeps, converged, kkt, obj
