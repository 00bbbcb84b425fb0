"""Compiled Nelder-Mead for the step-function NPQIV criterion.

scipy's implementation spends most of its time in per-iteration Python
overhead, which dominates Monte Carlo runs that perform hundreds of thousands
of small fits. The kernels below follow the same algorithm and stopping rule.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _reference(delta, h0, Qn, y1, Ut, gamma, weights):
    """Indicator pattern and ``U' rho`` at ``delta``; later evaluations only add flips."""
    n = y1.shape[0]
    m = delta.shape[0]
    r = Ut.shape[0]
    ind = np.zeros(n, dtype=np.bool_)
    v = np.zeros(r)
    for i in range(n):
        h = h0[i]
        for j in range(m):
            h += Qn[i, j] * delta[j]
        ind[i] = y1[i] <= h
        rho = weights[i] * ((1.0 if ind[i] else 0.0) - gamma)
        for a in range(r):
            v[a] += Ut[a, i] * rho
    return ind, v


@njit(cache=True, nogil=True)
def _objective(delta, h0, Qn, y1, Ut, weights, scale, lam, b0, N, R, ref_ind, ref_v):
    n = y1.shape[0]
    m = delta.shape[0]
    r = Ut.shape[0]
    v = ref_v.copy()
    for i in range(n):
        h = h0[i]
        for j in range(m):
            h += Qn[i, j] * delta[j]
        now = y1[i] <= h
        if now != ref_ind[i]:
            step = weights[i] if now else -weights[i]
            for a in range(r):
                v[a] += Ut[a, i] * step
    val = 0.0
    for a in range(r):
        val += v[a] * v[a]
    val /= scale
    if lam > 0.0:
        k = b0.shape[0]
        beta = b0.copy()
        for j in range(m):
            for a in range(k):
                beta[a] += N[a, j] * delta[j]
        pen = 0.0
        for a in range(k):
            for b in range(k):
                pen += beta[a] * R[a, b] * beta[b]
        val += lam * pen
    return val


@njit(cache=True, nogil=True)
def npqiv_objective(delta, h0, Qn, y1, Ut, gamma, weights, scale, lam, b0, N, R):
    """Penalized NPQIV criterion at ``beta = b0 + N delta``.

    ``h0 = Q b0`` and ``Qn = Q N`` are precomputed; ``scale = n * Sigma``.
    """
    ind, v = _reference(delta, h0, Qn, y1, Ut, gamma, weights)
    return _objective(delta, h0, Qn, y1, Ut, weights, scale, lam, b0, N, R, ind, v)


@njit(cache=True, nogil=True)
def nelder_mead(x0, steps, maxiter, xtol, ftol, h0, Qn, y1, Ut, gamma, weights, scale, lam, b0, N, R):
    """Minimize :func:`npqiv_objective` over ``delta`` from ``x0``.

    Standard coefficients (reflection 1, expansion 2, contraction 0.5,
    shrink 0.5); stops when both the simplex diameter in ``x`` and the spread
    of function values fall below ``xtol`` / ``ftol`` or after ``maxiter``
    iterations. Returns ``(x, f, iterations, converged)``.
    """
    m = x0.shape[0]
    ref_ind, ref_v = _reference(x0, h0, Qn, y1, Ut, gamma, weights)
    sim = np.empty((m + 1, m))
    fs = np.empty(m + 1)
    sim[0] = x0
    for j in range(m):
        sim[j + 1] = x0
        sim[j + 1, j] += steps[j]
    for j in range(m + 1):
        fs[j] = _objective(sim[j], h0, Qn, y1, Ut, weights, scale, lam, b0, N, R, ref_ind, ref_v)
    it = 0
    converged = False
    while it < maxiter:
        order = np.argsort(fs)
        sim = sim[order]
        fs = fs[order]
        xspread = 0.0
        fspread = 0.0
        for j in range(1, m + 1):
            fspread = max(fspread, abs(fs[j] - fs[0]))
            for a in range(m):
                xspread = max(xspread, abs(sim[j, a] - sim[0, a]))
        if xspread <= xtol and fspread <= ftol:
            converged = True
            break
        it += 1
        centroid = np.zeros(m)
        for j in range(m):
            centroid += sim[j]
        centroid /= m
        xr = 2.0 * centroid - sim[m]
        fr = _objective(xr, h0, Qn, y1, Ut, weights, scale, lam, b0, N, R, ref_ind, ref_v)
        if fr < fs[0]:
            xe = 3.0 * centroid - 2.0 * sim[m]
            fe = _objective(xe, h0, Qn, y1, Ut, weights, scale, lam, b0, N, R, ref_ind, ref_v)
            if fe < fr:
                sim[m] = xe
                fs[m] = fe
            else:
                sim[m] = xr
                fs[m] = fr
            continue
        if fr < fs[m - 1]:
            sim[m] = xr
            fs[m] = fr
            continue
        if fr < fs[m]:
            xc = 1.5 * centroid - 0.5 * sim[m]
            fc = _objective(xc, h0, Qn, y1, Ut, weights, scale, lam, b0, N, R, ref_ind, ref_v)
            if fc <= fr:
                sim[m] = xc
                fs[m] = fc
                continue
        else:
            xcc = 0.5 * centroid + 0.5 * sim[m]
            fcc = _objective(xcc, h0, Qn, y1, Ut, weights, scale, lam, b0, N, R, ref_ind, ref_v)
            if fcc < fs[m]:
                sim[m] = xcc
                fs[m] = fcc
                continue
        for j in range(1, m + 1):
            sim[j] = sim[0] + 0.5 * (sim[j] - sim[0])
            fs[j] = _objective(sim[j], h0, Qn, y1, Ut, weights, scale, lam, b0, N, R, ref_ind, ref_v)
    best = np.argmin(fs)
    return sim[best].copy(), fs[best], it, converged
