"""Exact proximal map of the entrywise l_{1/2} quasi-norm (half-thresholding).

For a weight ``mu > 0`` the scalar problem is

    min_a  mu * sqrt(|a|) + 0.5 * (a - b)**2

Its global minimizer is 0 for ``|b| <= tau = 1.5 * mu**(2/3)`` and otherwise
``sign(b) * t**2`` where ``t`` is the largest real root of
``t**3 - |b| t + mu / 2 = 0``.
"""

import numpy as np


def threshold(lambda_eff):
    """Zeroing threshold ``1.5 * lambda_eff**(2/3)``."""
    return 1.5 * np.cbrt(lambda_eff) ** 2


def _half_threshold(b, mu):
    b = np.asarray(b, dtype=float)
    mag = np.abs(b)
    tau = threshold(mu)
    keep = mag > tau
    out = np.zeros_like(b)
    if not np.any(keep):
        return out
    m = mag[keep]
    # Largest root of the depressed cubic t^3 - m t + mu/2, trigonometric form.
    # Three real roots exist whenever m > (27/16)^(1/3) mu^(2/3) < tau.
    c = -0.75 * mu / m * np.sqrt(3.0 / m)
    phi = np.arccos(np.clip(c, -1.0, 1.0))
    t = 2.0 * np.sqrt(m / 3.0) * np.cos(phi / 3.0)
    # One Newton refinement; the root sits on the convex branch where
    # 3t^2 - m > 0, so the step is well defined. Keep it only if it helps.
    h = t**3 - m * t + 0.5 * mu
    dh = 3.0 * t**2 - m
    t_new = np.where(dh > 0, t - h / np.where(dh > 0, dh, 1.0), t)
    better = np.abs(t_new**3 - m * t_new + 0.5 * mu) < np.abs(h)
    t = np.where(better, t_new, t)
    out[keep] = np.sign(b[keep]) * t**2
    return out


def half_threshold_scalar(b, lambda_eff):
    """Global minimizer of ``lambda_eff * sqrt(|a|) + (a - b)**2 / 2``.

    Ties at ``|b| == tau`` resolve to zero.
    """
    if not lambda_eff > 0:
        raise ValueError("lambda_eff must be positive")
    if not np.isfinite(b):
        raise ValueError("b must be finite")
    return float(_half_threshold(np.asarray(float(b)), float(lambda_eff)))


def half_threshold_matrix(Q, lam, rho):
    """Entrywise half-thresholding of ``Q`` with weight ``lam / rho``.

    This is the exact minimizer of
    ``lam * sum(sqrt(|A|)) + rho / 2 * ||A - Q||_F**2``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    Q = np.asarray(Q, dtype=float)
    if not np.all(np.isfinite(Q)):
        raise ValueError("Q must be finite")
    return _half_threshold(Q, lam / rho)


def half_norm(A):
    """Entrywise sum of square roots of absolute values."""
    return float(np.sqrt(np.abs(A)).sum())


def prox_objective(a, b, lambda_eff):
    return lambda_eff * np.sqrt(np.abs(a)) + 0.5 * (a - b) ** 2
