"""Inner ADMM for the detection-coefficient block.

Solves

    min_{alpha, p}  sum_r  -y_r log p_r + M lam_r p_r
    s.t.            p = Z alpha,  0 <= p <= 1

by splitting on ``p = Z alpha`` with scaled dual ``omega``.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .types import DetectionState

logger = logging.getLogger(__name__)


def pinv(Z, rcond=1e-12):
    """SVD pseudo-inverse with cutoff ``rcond * sigma_max``; warns on rank loss."""
    Z = np.asarray(Z, dtype=float)
    s = np.linalg.svd(Z, compute_uv=False)
    if s.size and s.min() <= rcond * s.max():
        warnings.warn("feature matrix has linearly dependent columns", RuntimeWarning, stacklevel=2)
    return np.linalg.pinv(Z, rcond=rcond)


@dataclass
class AlphaProblem:
    y_vec: np.ndarray
    lambda_vec: np.ndarray
    M: int
    Z: np.ndarray
    rho_p: float = 1.0
    Z_pinv: np.ndarray | None = None

    def __post_init__(self):
        self.y_vec = np.asarray(self.y_vec, dtype=float).ravel()
        self.lambda_vec = np.asarray(self.lambda_vec, dtype=float).ravel()
        if self.Z_pinv is None:
            self.Z_pinv = pinv(self.Z)
        n = self.Z.shape[0]
        if self.y_vec.shape[0] != n or self.lambda_vec.shape[0] != n:
            raise ValueError("y, lambda and Z must agree on the number of pairs")

    def objective(self, p):
        return detection_objective(p, self.y_vec, self.lambda_vec, self.M)


def detection_objective(p, y_vec, lambda_vec, M):
    """``sum(-y log p + M lam p)``; infinite if a counted pair has p == 0."""
    p = np.asarray(p, dtype=float)
    pos = y_vec > 0
    if np.any(p[pos] <= 0):
        return np.inf
    return float(-(y_vec[pos] * np.log(p[pos])).sum() + M * (lambda_vec * p).sum())


def p_closed_form(p_bar, y_vec, lambda_vec, M, rho_p):
    """Entrywise minimizer of ``-y log p + M lam p + rho/2 (p - p_bar)^2`` on [0, 1].

    Uses the positive root of ``rho p^2 - (rho p_bar - M lam) p - y = 0``,
    evaluated in the cancellation-free form when ``rho p_bar - M lam < 0``.
    """
    if not rho_p > 0:
        raise ValueError("rho_p must be positive")
    y = np.asarray(y_vec, dtype=float)
    c = rho_p * np.asarray(p_bar, dtype=float) - M * np.asarray(lambda_vec, dtype=float)
    disc = np.sqrt(4.0 * rho_p * y + c * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = np.where(disc - c > 0, 2.0 * y / (disc - c), 0.0)
    root = np.where(c >= 0, (c + disc) / (2.0 * rho_p), neg)
    return np.clip(root, 0.0, 1.0)


def alpha_step(p, omega, Z_pinv):
    return Z_pinv @ (p + omega)


def solve_alpha(problem, init, tol=1e-6, max_iter=2000, adapt_rho=True, engine="compiled", memory=5):
    """Run the inner ADMM from ``init`` until primal and dual residuals <= tol.

    The penalty starts at ``init.rho_p`` (or ``problem.rho_p``) and, when
    ``adapt_rho`` is set, is rebalanced by a factor 2 whenever one residual
    exceeds the other tenfold; ``omega`` is rescaled to keep the unscaled
    multiplier fixed.

    With ``memory > 0`` the plain ADMM map on the state ``(Z alpha, omega)``
    is extrapolated by Anderson acceleration over the last ``memory``
    steps. An extrapolated state is kept only when its fixed-point residual
    is below that of the plain step, and the history is cleared whenever
    the penalty changes. Without it the iteration can need tens of
    thousands of steps when a few pairs carry large counts at tiny ``p``
    or when several bounds ``p = 0`` / ``p = 1`` are active at the solution.

    The returned ``p`` is ``clip(Z alpha, 0, 1)`` so that (alpha, p) is a
    feasible pair whenever ``Z alpha`` already lies in the box. If the
    iteration cap is hit, the iterate with the smallest primal residual is
    returned with ``converged=False``.
    """
    Z, Zp = problem.Z, problem.Z_pinv
    y, lam, M = problem.y_vec, problem.lambda_vec, problem.M
    rho = init.rho_p if init.rho_p is not None else problem.rho_p
    alpha = np.asarray(init.alpha, dtype=float).copy()
    omega = np.asarray(init.omega, dtype=float).copy()
    if engine == "compiled":
        from ._kernels import alpha_admm

        c = np.ascontiguousarray
        alpha, omega, Za, rho, n_iter, converged, best_r = alpha_admm(
            c(Z, dtype=float), c(Zp, dtype=float), c(y), c(M * lam), alpha, omega,
            float(rho), float(tol), int(max_iter), bool(adapt_rho), int(memory),
        )
        converged = bool(converged)
    else:
        alpha, omega, Za, rho, n_iter, converged, best_r = _alpha_loop(
            Z, Zp, y, lam, M, alpha, omega, rho, tol, max_iter, adapt_rho, memory
        )
    if not converged:
        logger.debug("alpha ADMM hit max_iter=%d (primal %.2e)", max_iter, best_r)
    return DetectionState(
        alpha=alpha, p=np.clip(Za, 0.0, 1.0), omega=omega, n_iter=int(n_iter),
        converged=converged, rho_p=float(rho),
    )


def _admm_map(Z, Zp, y, lam, M, Za, omega, rho):
    """One plain ADMM pass from the state ``(Z alpha, omega)``."""
    p = p_closed_form(Za - omega, y, lam, M, rho)
    alpha = Zp @ (p + omega)
    Za_new = Z @ alpha
    omega_new = omega + p - Za_new
    return alpha, Za_new, omega_new, p


def _anderson_weights(dG, g):
    """Regularized least-squares coefficients ``argmin ||g - dG^T gamma||``."""
    A = dG @ dG.T
    reg = 1e-10 * np.trace(A) / A.shape[0] + 1e-300
    return np.linalg.solve(A + reg * np.eye(A.shape[0]), dG @ g)


def _alpha_loop(Z, Zp, y, lam, M, alpha, omega, rho, tol, max_iter, adapt_rho, memory=5):
    Za = Z @ alpha
    step = _admm_map(Z, Zp, y, lam, M, Za, omega, rho)
    best = (np.inf, alpha, omega, Za, rho)
    X, G = [], []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        alpha_new, Za_new, omega_new, p = step
        r = np.linalg.norm(p - Za_new)
        s = rho * np.linalg.norm(Za_new - Za)
        if r <= tol and s <= tol:
            return alpha_new, omega_new, Za_new, rho, n_iter, True, r
        if r < best[0]:
            best = (r, alpha_new, omega_new, Za_new, rho)
        if adapt_rho and n_iter % 10 == 0 and (r > 10.0 * s or s > 10.0 * r):
            factor = 2.0 if r > 10.0 * s else 0.5
            rho *= factor
            Za, omega = Za_new, omega_new / factor
            X, G = [], []
            step = _admm_map(Z, Zp, y, lam, M, Za, omega, rho)
            continue
        x = np.concatenate([Za, omega])
        fx = np.concatenate([Za_new, omega_new])
        g = fx - x
        X.append(x)
        G.append(g)
        if len(X) > memory + 1:
            X.pop(0)
            G.pop(0)
        if len(X) >= 2:
            dX = np.diff(np.array(X), axis=0)
            dG = np.diff(np.array(G), axis=0)
            xa = fx - (dX + dG).T @ _anderson_weights(dG, g)
            n = Za.size
            trial = _admm_map(Z, Zp, y, lam, M, xa[:n], xa[n:], rho)
            ga = np.concatenate([trial[1], trial[2]]) - xa
            if np.linalg.norm(ga) < np.linalg.norm(g):
                Za, omega, step = xa[:n], xa[n:], trial
                continue
        Za, omega = Za_new, omega_new
        step = _admm_map(Z, Zp, y, lam, M, Za, omega, rho)
    r, alpha, omega, Za, rho = best
    return alpha, omega, Za, rho, n_iter, False, r
