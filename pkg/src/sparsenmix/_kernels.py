"""Compiled inner loops.

Both factor blocks share one projected-gradient kernel. For the U block the
arguments are ``(U, V, M*P, counted y_sum, B_UU, B_UV, rho_UU, rho_UV)``; the V
block passes the transposed problem ``(V, U, M*P^T, ..., B_VV, B_UV^T,
rho_VV, rho_UV)``. The kernel minimises

    sum(MP * L) - sum_{Y>0} Y log L + rho_s/2 ||X X^T - Bs||^2 + rho_c/2 ||L - Bc||^2

over ``X >= 0`` with ``L = X O^T``, using the same step rule as
:func:`sparsenmix.uv.projected_gradient_block`. Counted pairs are passed as
flat row-major indices ``idx`` with values ``yc`` so the log term only touches
entries that carry counts. The first ``n_hard`` of them hold at least one
count and must stay above the floor; the rest carry fractional imputed mass
and use the clamped term ``Y log max(L, floor)``.

``alpha_admm`` is the inner ADMM loop of :func:`sparsenmix.alpha.solve_alpha`.
"""

import numpy as np
from numba import njit

# Reassociation lets the reductions vectorise; NaN/inf semantics are kept
# because the floor check relies on them.
_FM = {"reassoc", "contract"}
_TINY = 1e-300


@njit(cache=True, fastmath=_FM)
def _sqdist(A, B):
    a = A.ravel()
    b = B.ravel()
    acc = 0.0
    for t in range(a.shape[0]):
        d = a[t] - b[t]
        acc += d * d
    return acc


@njit(cache=True, fastmath=_FM)
def _value(L, G, MP, idx, yc, n_hard, Bs, Bc, rho_s, rho_c, floor):
    lf = L.ravel()
    mp = MP.ravel()
    f = 0.0
    for t in range(lf.shape[0]):
        f += mp[t] * lf[t]
    for t in range(n_hard):
        lij = lf[idx[t]]
        if lij < floor or not lij > 0.0:
            return np.inf
        f -= yc[t] * np.log(lij)
    clamp = max(floor, _TINY)
    for t in range(n_hard, idx.shape[0]):
        f -= yc[t] * np.log(max(lf[idx[t]], clamp))
    if rho_c > 0.0:
        f += 0.5 * rho_c * _sqdist(L, Bc)
    if rho_s > 0.0:
        f += 0.5 * rho_s * _sqdist(G, Bs)
    return f


@njit(cache=True, fastmath=_FM)
def _grad(X, O, L, G, MP, idx, yc, n_hard, Bs, Bc, rho_s, rho_c, floor, R):
    n = L.shape[0]
    rf = R.ravel()
    lf = L.ravel()
    mp = MP.ravel()
    if rho_c > 0.0:
        bc = Bc.ravel()
        for t in range(rf.shape[0]):
            rf[t] = mp[t] + rho_c * (lf[t] - bc[t])
    else:
        for t in range(rf.shape[0]):
            rf[t] = mp[t]
    for t in range(n_hard):
        rf[idx[t]] -= yc[t] / lf[idx[t]]
    clamp = max(floor, _TINY)
    for t in range(n_hard, idx.shape[0]):
        if lf[idx[t]] > clamp:
            rf[idx[t]] -= yc[t] / lf[idx[t]]
    g = np.dot(R, O)
    if rho_s > 0.0:
        S = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                S[i, j] = rho_s * ((G[i, j] - Bs[i, j]) + (G[j, i] - Bs[j, i]))
        g += np.dot(S, X)
    return g


@njit(cache=True)
def pgd_block(X0, O, MP, idx, yc, n_hard, Bs, Bc, rho_s, rho_c, floor, t_max, armijo_c, t_min, S_max, step_tol):
    X = np.maximum(X0, 0.0)
    n, k = X.shape
    m = O.shape[0]
    Ot = np.ascontiguousarray(O.T)
    R = np.empty((n, m))
    Xn = np.empty_like(X)
    use_g = rho_s > 0.0
    L = np.dot(X, Ot)
    G = np.dot(X, np.ascontiguousarray(X.T)) if use_g else np.zeros((1, 1))
    f = _value(L, G, MP, idx, yc, n_hard, Bs, Bc, rho_s, rho_c, floor)
    f0 = f
    steps = 0
    stalled = False
    converged = False
    while steps < S_max:
        g = _grad(X, O, L, G, MP, idx, yc, n_hard, Bs, Bc, rho_s, rho_c, floor, R)
        t = t_max
        dn2 = 0.0
        fn = f
        Ln = L
        Gn = G
        while True:
            dn2 = 0.0
            for i in range(n):
                for c in range(k):
                    v = X[i, c] - t * g[i, c]
                    if v < 0.0:
                        v = 0.0
                    Xn[i, c] = v
                    d = v - X[i, c]
                    dn2 += d * d
            if dn2 == 0.0:
                break
            Ln = np.dot(Xn, Ot)
            if use_g:
                Gn = np.dot(Xn, np.ascontiguousarray(Xn.T))
            fn = _value(Ln, Gn, MP, idx, yc, n_hard, Bs, Bc, rho_s, rho_c, floor)
            if fn <= f - armijo_c * dn2 / t:
                break
            t *= 0.5
            if t < t_min:
                stalled = True
                break
        if stalled:
            break
        if dn2 == 0.0:
            converged = True
            break
        X, Xn = Xn, X
        L = Ln
        G = Gn
        f = fn
        steps += 1
        if np.sqrt(dn2) <= step_tol:
            converged = True
            break
    return X.copy(), steps, f0, f, stalled, converged


@njit(cache=True)
def _p_update(Za, omega, y, mlam, rho, p):
    n = p.shape[0]
    for r in range(n):
        c = rho * (Za[r] - omega[r]) - mlam[r]
        disc = np.sqrt(4.0 * rho * y[r] + c * c)
        if c >= 0.0:
            v = (c + disc) / (2.0 * rho)
        else:
            den = disc - c
            v = 2.0 * y[r] / den if den > 0.0 else 0.0
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        p[r] = v


@njit(cache=True)
def _admm_map(Z, Zp, y, mlam, Za, omega, rho, p, v):
    """Plain ADMM pass; returns ``(alpha, Za_new, omega_new)`` and fills ``p``."""
    n = p.shape[0]
    _p_update(Za, omega, y, mlam, rho, p)
    for r in range(n):
        v[r] = p[r] + omega[r]
    alpha = np.dot(Zp, v)
    Za_new = np.dot(Z, alpha)
    omega_new = np.empty(n)
    for r in range(n):
        omega_new[r] = omega[r] + p[r] - Za_new[r]
    return alpha, Za_new, omega_new


@njit(cache=True)
def alpha_admm(Z, Zp, y, mlam, alpha0, omega0, rho0, tol, max_iter, adapt_rho, memory):
    """Inner ADMM loop with safeguarded Anderson acceleration.

    Mirrors ``sparsenmix.alpha._alpha_loop``; returns
    ``(alpha, omega, Za, rho, n_iter, converged, best_primal)``.
    """
    n, R = Z.shape
    rho = rho0
    Za = np.dot(Z, alpha0)
    omega = omega0.copy()
    p = np.empty(n)
    v = np.empty(n)
    p_trial = np.empty(n)
    alpha_new, Za_new, omega_new = _admm_map(Z, Zp, y, mlam, Za, omega, rho, p, v)
    best_r = np.inf
    best_alpha = alpha0.copy()
    best_omega = omega.copy()
    best_Za = Za.copy()
    best_rho = rho
    H = memory + 1
    Xh = np.empty((H, 2 * n))
    Gh = np.empty((H, 2 * n))
    h = 0
    x = np.empty(2 * n)
    fx = np.empty(2 * n)
    g = np.empty(2 * n)
    it = 0
    for it in range(1, max_iter + 1):
        r2 = 0.0
        s2 = 0.0
        for r in range(n):
            d = p[r] - Za_new[r]
            r2 += d * d
            e = Za_new[r] - Za[r]
            s2 += e * e
        res_p = np.sqrt(r2)
        res_d = rho * np.sqrt(s2)
        if res_p <= tol and res_d <= tol:
            return alpha_new, omega_new, Za_new, rho, it, True, res_p
        if res_p < best_r:
            best_r = res_p
            best_alpha[:] = alpha_new
            best_omega[:] = omega_new
            best_Za[:] = Za_new
            best_rho = rho
        if adapt_rho and it % 10 == 0 and (res_p > 10.0 * res_d or res_d > 10.0 * res_p):
            factor = 2.0 if res_p > 10.0 * res_d else 0.5
            rho *= factor
            Za = Za_new
            omega = omega_new / factor
            h = 0
            alpha_new, Za_new, omega_new = _admm_map(Z, Zp, y, mlam, Za, omega, rho, p, v)
            continue
        for r in range(n):
            x[r] = Za[r]
            x[n + r] = omega[r]
            fx[r] = Za_new[r]
            fx[n + r] = omega_new[r]
        gn2 = 0.0
        for k in range(2 * n):
            g[k] = fx[k] - x[k]
            gn2 += g[k] * g[k]
        if h == H:
            for j in range(H - 1):
                Xh[j] = Xh[j + 1]
                Gh[j] = Gh[j + 1]
            h -= 1
        Xh[h] = x
        Gh[h] = g
        h += 1
        if h >= 2:
            m = h - 1
            dX = np.empty((m, 2 * n))
            dG = np.empty((m, 2 * n))
            for j in range(m):
                dX[j] = Xh[j + 1] - Xh[j]
                dG[j] = Gh[j + 1] - Gh[j]
            A = np.dot(dG, dG.T)
            tr = 0.0
            for j in range(m):
                tr += A[j, j]
            reg = 1e-10 * tr / m + 1e-300
            for j in range(m):
                A[j, j] += reg
            gamma = np.linalg.solve(A, np.dot(dG, g))
            xa = fx - np.dot(gamma, dX + dG)
            Za_t = xa[:n].copy()
            om_t = xa[n:].copy()
            a_t, Za_tn, om_tn = _admm_map(Z, Zp, y, mlam, Za_t, om_t, rho, p_trial, v)
            ga2 = 0.0
            for r in range(n):
                d1 = Za_tn[r] - Za_t[r]
                d2 = om_tn[r] - om_t[r]
                ga2 += d1 * d1 + d2 * d2
            if ga2 < gn2:
                Za = Za_t
                omega = om_t
                alpha_new, Za_new, omega_new = a_t, Za_tn, om_tn
                p[:] = p_trial
                continue
        Za = Za_new
        omega = omega_new
        alpha_new, Za_new, omega_new = _admm_map(Z, Zp, y, mlam, Za, omega, rho, p, v)
    return best_alpha, best_omega, best_Za, best_rho, it, False, best_r
