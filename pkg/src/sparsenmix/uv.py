"""Projected-gradient solvers for the factor blocks.

The smooth part of the augmented Lagrangian seen by the U and V blocks is

    F(U, V) = f(U, V) + sum_X rho_X / 2 * ||M_X - B_X||_F^2,
    f(U, V) = sum_ij M p_ij lam_ij - y_sum_ij log lam_ij,

with ``lam = U V^T``, ``M_UU = U U^T``, ``M_UV = U V^T``, ``M_VV = V V^T`` and
``B_X = A_X - W_X``.

Pairs carrying at least one count (``y_sum >= 1``) must keep ``lam`` at or
above ``delta_floor``; trial points that break this evaluate to ``inf``.
Fractional mass below one count only arises from imputing missing
replicates, and its log term is clamped instead, ``-y log max(lam, floor)``.
Without the clamp, an imputed ``p * lam`` at a nearly empty pair acts as a
weightless barrier that blocks every step zeroing that pair's support.
"""

from dataclasses import dataclass

import numpy as np

from .types import BLOCKS


class DomainError(ValueError):
    """Intensity fell below the floor at a pair with positive counts."""


# Clamp level for fractional counts when no floor is configured.
_TINY = 1e-300


def hard_pairs(y_sum):
    """Pairs held above the floor: at least one count in the summed data."""
    return np.asarray(y_sum) >= 1.0


def soft_pairs(y_sum):
    """Pairs with only fractional (imputed) mass below one count."""
    y_sum = np.asarray(y_sum)
    return (y_sum > 0) & (y_sum < 1.0)


def _counted_min(lam, counted):
    return lam[counted].min() if counted.any() else np.inf


def _log_term(y_sum, lam, delta_floor):
    hard, soft = hard_pairs(y_sum), soft_pairs(y_sum)
    total = (y_sum[hard] * np.log(lam[hard])).sum()
    if soft.any():
        total += (y_sum[soft] * np.log(np.maximum(lam[soft], max(delta_floor, _TINY)))).sum()
    return total


def eval_f(U, V, P, y_sum, M, delta_floor=0.0):
    """Poisson part of the objective with replicates collapsed through ``y_sum``."""
    y_sum = np.asarray(y_sum, dtype=float)
    lam = U @ V.T
    low = _counted_min(lam, hard_pairs(y_sum))
    if not low > 0 or low < delta_floor:
        raise DomainError(f"intensity {low:.3e} below floor at a counted pair")
    return float(M * (P * lam).sum() - _log_term(y_sum, lam, delta_floor))


def _ratio(y_sum, lam, delta_floor=0.0):
    out = np.zeros_like(lam)
    live = hard_pairs(y_sum) | (soft_pairs(y_sum) & (lam > max(delta_floor, _TINY)))
    np.divide(y_sum, lam, out=out, where=live)
    return out


def _sym_residual(G, B):
    S = G - B
    return S + S.T


def grad_U(U, V, P, y_sum, M, aux=None, delta_floor=0.0):
    """Gradient of F with respect to U.

    The UU term uses ``(S + S^T) U`` with ``S = U U^T - B_UU``, which equals
    ``2 S U`` for the symmetric B produced by the solver.
    """
    lam = U @ V.T
    g = (M * P - _ratio(y_sum, lam, delta_floor)) @ V
    if aux is not None:
        if aux.active("UU"):
            g += aux.rho["UU"] * _sym_residual(U @ U.T, aux.B("UU")) @ U
        if aux.active("UV"):
            g += aux.rho["UV"] * (lam - aux.B("UV")) @ V
    return g


def grad_V(U, V, P, y_sum, M, aux=None, delta_floor=0.0):
    """Gradient of F with respect to V (mirror of :func:`grad_U`)."""
    lam = U @ V.T
    g = (M * P - _ratio(y_sum, lam, delta_floor)).T @ U
    if aux is not None:
        if aux.active("VV"):
            g += aux.rho["VV"] * _sym_residual(V @ V.T, aux.B("VV")) @ V
        if aux.active("UV"):
            g += aux.rho["UV"] * (lam - aux.B("UV")).T @ U
    return g


class SmoothObjective:
    """``F(U, V)`` for fixed detection probabilities, counts and aux state.

    ``value`` returns ``inf`` outside the floor-safe domain so that a line
    search rejects such trial points.
    """

    def __init__(self, y_sum, P, M, aux=None, delta_floor=1e-10):
        self.y_sum = np.asarray(y_sum, dtype=float)
        self.P = np.asarray(P, dtype=float)
        self.M = M
        self.aux = aux
        self.delta_floor = delta_floor
        self._hard = hard_pairs(self.y_sum)
        self._MP = M * self.P
        if aux is not None:
            self._B = {X: aux.B(X) for X in BLOCKS if aux.active(X)}

    def penalty(self, U, V, lam=None):
        if self.aux is None:
            return 0.0
        total = 0.0
        for X, B in self._B.items():
            if X == "UU":
                G = U @ U.T
            elif X == "VV":
                G = V @ V.T
            else:
                G = U @ V.T if lam is None else lam
            total += 0.5 * self.aux.rho[X] * float(((G - B) ** 2).sum())
        return total

    def value(self, U, V):
        lam = U @ V.T
        low = _counted_min(lam, self._hard)
        if not (low >= self.delta_floor and low > 0):
            return np.inf
        f = float((self._MP * lam).sum() - _log_term(self.y_sum, lam, self.delta_floor))
        return f + self.penalty(U, V, lam)

    def f(self, U, V):
        return eval_f(U, V, self.P, self.y_sum, self.M, self.delta_floor)

    def grad_U(self, U, V):
        return grad_U(U, V, self.P, self.y_sum, self.M, self.aux, self.delta_floor)

    def grad_V(self, U, V):
        return grad_V(U, V, self.P, self.y_sum, self.M, self.aux, self.delta_floor)

    def stationarity(self, U, V):
        """``(||min(U, grad_U)||_F, ||min(V, grad_V)||_F)``."""
        return (
            float(np.linalg.norm(np.minimum(U, self.grad_U(U, V)))),
            float(np.linalg.norm(np.minimum(V, self.grad_V(U, V)))),
        )


@dataclass
class BlockResult:
    X: np.ndarray
    n_steps: int
    obj_start: float
    obj_end: float
    stalled: bool
    converged: bool


def projected_gradient_block(
    X0, grad_fn, obj_fn, t_max, armijo_c=1e-5, t_min=1e-7, S_max=3000, step_tol=1e-7,
):
    """Projected gradient descent on ``X >= 0`` with halving Armijo backtracking.

    Every step restarts the search from ``t_max``. A trial point is accepted
    when ``obj(X_new) <= obj(X) - armijo_c * ||X_new - X||^2 / t``. The loop
    ends when the accepted move is at most ``step_tol``, after ``S_max``
    steps, or when no step above ``t_min`` is accepted (stalled; the current
    iterate is kept).
    """
    X = np.maximum(np.asarray(X0, dtype=float), 0.0)
    fx = obj_fn(X)
    f0 = fx
    stalled = converged = False
    steps = 0
    while steps < S_max:
        g = grad_fn(X)
        t = t_max
        while True:
            X_new = np.maximum(X - t * g, 0.0)
            d = X_new - X
            dn2 = float((d * d).sum())
            if dn2 == 0.0:
                break
            f_new = obj_fn(X_new)
            if f_new <= fx - armijo_c * dn2 / t:
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
        X, fx = X_new, f_new
        steps += 1
        if np.sqrt(dn2) <= step_tol:
            converged = True
            break
    return BlockResult(X=X, n_steps=steps, obj_start=f0, obj_end=fx, stalled=stalled, converged=converged)


def _block_terms(smooth, X):
    aux = smooth.aux
    if aux is None or not aux.active(X):
        return np.zeros((1, 1)), 0.0
    return np.ascontiguousarray(smooth._B[X]), aux.rho[X]


def _counted_entries(Y):
    """Flat indices and values of positive entries, hard pairs first."""
    flat = np.ascontiguousarray(Y, dtype=float).ravel()
    hard = np.flatnonzero(flat >= 1.0)
    soft = np.flatnonzero((flat > 0) & (flat < 1.0))
    idx = np.concatenate([hard, soft]).astype(np.int64)
    return idx, flat[idx].copy(), hard.size


def _compiled_block(which, U, V, smooth, t_max, armijo_c=1e-5, t_min=1e-7, S_max=3000, step_tol=1e-7):
    from ._kernels import pgd_block

    Bc, rho_c = _block_terms(smooth, "UV")
    if which == "U":
        X0, O, MP, Y = U, V, smooth._MP, smooth.y_sum
        Bs, rho_s = _block_terms(smooth, "UU")
    else:
        X0, O, MP, Y = V, U, smooth._MP.T, smooth.y_sum.T
        Bs, rho_s = _block_terms(smooth, "VV")
        Bc = Bc.T
    if rho_c == 0.0:
        Bc = np.zeros((1, 1))
    if rho_s == 0.0:
        Bs = np.zeros((1, 1))
    c = np.ascontiguousarray
    idx, yc, n_hard = _counted_entries(Y)
    X, steps, _, _, stalled, converged = pgd_block(
        c(X0, dtype=float), c(O, dtype=float), c(MP), idx, yc, n_hard, c(Bs), c(Bc),
        float(rho_s), float(rho_c), float(smooth.delta_floor), float(t_max),
        float(armijo_c), float(t_min), int(S_max), float(step_tol),
    )
    if which == "U":
        f0, f1 = smooth.value(U, V), smooth.value(X, V)
    else:
        f0, f1 = smooth.value(U, V), smooth.value(U, X)
    return BlockResult(X=X, n_steps=steps, obj_start=f0, obj_end=f1, stalled=stalled, converged=converged)


def update_U(U, V, smooth, t_max, engine="compiled", **kw):
    """Run the U block; ``engine`` selects the compiled kernel or plain numpy."""
    if engine == "compiled":
        return _compiled_block("U", U, V, smooth, t_max, **kw)
    return projected_gradient_block(
        U, lambda X: smooth.grad_U(X, V), lambda X: smooth.value(X, V), t_max, **kw
    )


def update_V(U, V, smooth, t_max, engine="compiled", **kw):
    if engine == "compiled":
        return _compiled_block("V", U, V, smooth, t_max, **kw)
    return projected_gradient_block(
        V, lambda X: smooth.grad_V(U, X), lambda X: smooth.value(U, X), t_max, **kw
    )
