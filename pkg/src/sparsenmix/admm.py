"""Outer ADMM loop for sparse nonnegative factorization under imperfect detection.

One outer iteration:

1. detection block: inner ADMM for (alpha, p) at the current intensities;
2. missing replicate entries replaced by ``p_ij * u_i^T v_j``;
3. projected-gradient U block, then V block;
4. ``A_X <- half_threshold(M_X + W_X, lam_X, rho_X)`` for every active block;
5. residual-gated scaled-dual / penalty update.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .alpha import AlphaProblem, detection_objective, pinv, solve_alpha
from .initialization import (
    block_matrices, init_aux, init_detection, lift_to_floor, scale_aware_init,
)
from .prox import half_norm, half_threshold_matrix, threshold
from .types import (
    BLOCKS, AuxState, CountData, FactorPair, FitResult, as_feature_matrix,
)
from .uv import SmoothObjective, hard_pairs, update_U, update_V

logger = logging.getLogger(__name__)


class SolverDivergence(FloatingPointError):
    """Non-finite iterate; ``trace`` holds everything recorded so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def eps_schedule(rho_X, eps0, beta):
    """Residual tolerance ``eps0 * rho_X**(-beta)``."""
    if not 0.5 < beta < 2.0 / 3.0:
        raise ValueError("beta must lie strictly inside (1/2, 2/3)")
    if not (rho_X > 0 and eps0 > 0):
        raise ValueError("rho and eps0 must be positive")
    return eps0 * rho_X ** (-beta)


def impute_missing(data, p, U, V):
    """Fill masked replicate entries with ``p_ij * (U V^T)_ij``."""
    if not data.missing.any():
        return data
    fill = np.asarray(p, dtype=float).reshape(data.I, data.J) * (U @ V.T)
    y = np.where(data.missing, fill[:, :, None], data.y.astype(float))
    return CountData(y=y, missing=data.missing, filled=True)


def penalty_dual_update(aux, Ms, eps, gamma):
    """Scaled dual step with residual-gated penalty growth.

    For each active block, ``r = M_X - A_X``. If ``||r||_F <= eps[X]`` then
    ``W += r``; otherwise ``rho *= gamma`` and ``W = (W + r) / gamma``.
    Returns a new :class:`AuxState`.
    """
    if not gamma > 1:
        raise ValueError("gamma must exceed 1")
    out = aux.copy()
    for X in BLOCKS:
        if not aux.active(X):
            continue
        r = Ms[X] - aux.A[X]
        if np.linalg.norm(r) <= eps[X]:
            out.W[X] = aux.W[X] + r
        else:
            out.rho[X] = gamma * aux.rho[X]
            out.W[X] = (aux.W[X] + r) / gamma
            out.increases[X] += 1
    return out


def augmented_lagrangian(smooth, U, V, aux):
    """``f + sum_X lam ||A||_1/2 + <H, M - A> + rho/2 ||M - A||^2``."""
    total = smooth.f(U, V)
    if aux is None:
        return total
    Ms = block_matrices(U, V)
    for X in BLOCKS:
        if not aux.active(X):
            continue
        r = Ms[X] - aux.A[X]
        total += (
            aux.lam[X] * half_norm(aux.A[X])
            + float((aux.H(X) * r).sum())
            + 0.5 * aux.rho[X] * float((r * r).sum())
        )
    return total


def negative_log_likelihood(y_sum, p, lam, M):
    """Poisson N-mixture NLL without the ``log y!`` constants."""
    y = np.asarray(y_sum, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    pos = y > 0
    with np.errstate(divide="ignore"):
        logs = np.log(p[pos]) + np.log(lam[pos])
    return float(M * (p * lam).sum() - (y[pos] * logs).sum())


@dataclass
class KktResiduals:
    primal: dict = field(default_factory=dict)
    A_gap: dict = field(default_factory=dict)
    U_stat: float = 0.0
    V_stat: float = 0.0
    alpha_primal: float = 0.0
    alpha_dual: float = 0.0
    p_stat: float = 0.0

    def as_dict(self):
        d = {f"primal_{X}": v for X, v in self.primal.items()}
        d.update({f"A_gap_{X}": v for X, v in self.A_gap.items()})
        d.update(
            U_stat=self.U_stat, V_stat=self.V_stat, alpha_primal=self.alpha_primal,
            alpha_dual=self.alpha_dual, p_stat=self.p_stat,
        )
        return d

    def max(self):
        return max(self.as_dict().values())


def _a_subgradient_gap(A, H, lam, rho):
    """Entrywise distance of H from the limiting subdifferential of lam*sqrt|.|.

    At zero entries only the prox retention condition ``|H| <= rho * tau``
    is checked, since the limiting subdifferential at 0 is the whole line.
    """
    gap = np.empty_like(A)
    nz = A != 0
    a = A[nz]
    gap[nz] = np.abs(H[nz] - lam * np.sign(a) / (2.0 * np.sqrt(np.abs(a))))
    gap[~nz] = np.maximum(np.abs(H[~nz]) - rho * threshold(lam / rho), 0.0)
    return float(np.linalg.norm(gap))


def kkt_residuals(U, V, aux, detection, Z, y_sum, M, rho_p=1.0):
    """First-order optimality residuals of the split problem at the given iterate."""
    y_sum = np.asarray(y_sum, dtype=float)
    I, J = y_sum.shape
    p = np.asarray(detection.p, dtype=float)
    smooth = SmoothObjective(y_sum, p.reshape(I, J), M, aux, delta_floor=0.0)
    out = KktResiduals()
    out.U_stat, out.V_stat = smooth.stationarity(U, V)
    if aux is not None:
        Ms = block_matrices(U, V)
        for X in BLOCKS:
            if not aux.active(X):
                continue
            out.primal[X] = float(np.linalg.norm(Ms[X] - aux.A[X]))
            out.A_gap[X] = _a_subgradient_gap(aux.A[X], aux.H(X), aux.lam[X], aux.rho[X])
    Za = Z @ detection.alpha
    out.alpha_primal = float(np.linalg.norm(p - Za))
    out.alpha_dual = float(rho_p * np.linalg.norm(Z.T @ detection.omega))
    y = y_sum.ravel()
    lam = (U @ V.T).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(y > 0, -y / p, 0.0) + M * lam + rho_p * detection.omega
    res = np.where(p <= 0, np.maximum(-g, 0.0), np.where(p >= 1, np.maximum(g, 0.0), np.abs(g)))
    res = np.where(np.isnan(res), np.inf, res)
    out.p_stat = float(np.linalg.norm(res)) if np.all(np.isfinite(res)) else np.inf
    return out


def _new_trace():
    keys = (
        "nll", "objective", "F_pre_U", "F_post_U", "F_post_V", "L_pre", "L_post", "u_stalled", "v_stalled",
        "dual_bump", "kkt", "kkt_max", "alpha_iters", "u_steps", "v_steps",
        "delta_U", "delta_V", "delta_alpha", "min_counted_intensity",
    )
    trace = {k: [] for k in keys}
    for X in BLOCKS:
        for prefix in ("r_", "rho_", "eps_", "prox_gap_", "prox_bound_"):
            trace[prefix + X] = []
    trace["penalty_events"] = []
    return trace


def fit(data, Z, config, init=None, callback=None, kkt=True):
    """Run the sparse ADMM solver.

    Parameters
    ----------
    data : CountData
    Z : array, shape (I*J, R)
        Detection features, rows in row-major pair order.
    config : SolverConfig
    init : FactorPair, optional
        Starting factors; defaults to the scale-aware SVD start.
    callback : callable, optional
        Called as ``callback(k, U, V, detection)`` once with ``k = 0`` at the
        starting point and then after every outer iteration.
    kkt : bool
        Record KKT residuals each iteration.

    Returns
    -------
    FitResult
    """
    config.validate()
    I, J, M = data.I, data.J, data.M
    Z = as_feature_matrix(Z, I, J)
    F = int(config.F)
    rng = np.random.default_rng(config.seed)
    t_U, t_V = config.step_sizes(M)
    pg_kw = dict(
        armijo_c=config.armijo_c, t_min=config.t_min, S_max=int(config.S_max),
        step_tol=config.step_tol, engine=config.engine,
    )

    if init is None:
        init = scale_aware_init(data.y_sum, M, config.p0, F)
    factors = lift_to_floor(init, data.y_sum, config.delta_floor)
    U, V = factors.U.copy(), factors.V.copy()
    det = init_detection(Z, rng)
    aux = init_aux(U, V, config)
    Z_pinv = pinv(Z)

    trace = _new_trace()
    if callback is not None:
        callback(0, U, V, det)
    prev_nll = None
    converged, reason = False, "max_outer"
    k = 0
    for k in range(1, int(config.max_outer) + 1):
        U_old, V_old, alpha_old = U, V, det.alpha
        lam = U @ V.T
        problem = AlphaProblem(data.y_sum, lam, M, Z, config.rho_p, Z_pinv)
        det = solve_alpha(
            problem, det, config.inner_alpha_tol, int(config.inner_alpha_max_iter), engine=config.engine
        )
        data = impute_missing(data, det.p, U, V)
        P = det.p.reshape(I, J)
        smooth = SmoothObjective(data.y_sum, P, M, aux, config.delta_floor)

        trace["L_pre"].append(augmented_lagrangian(smooth, U, V, aux))
        trace["F_pre_U"].append(smooth.value(U, V))
        res_U = update_U(U, V, smooth, t_U, **pg_kw)
        U = res_U.X
        trace["F_post_U"].append(smooth.value(U, V))
        res_V = update_V(U, V, smooth, t_V, **pg_kw)
        V = res_V.X
        trace["F_post_V"].append(smooth.value(U, V))
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V)) and np.all(np.isfinite(det.alpha))):
            raise SolverDivergence(f"non-finite iterate at outer iteration {k}", trace)

        Ms = block_matrices(U, V)
        new_A = dict(aux.A)
        eps = {}
        for X in BLOCKS:
            if not aux.active(X):
                for prefix in ("r_", "eps_", "prox_gap_", "prox_bound_"):
                    trace[prefix + X].append(np.nan)
                continue
            Q = Ms[X] + aux.W[X]
            new_A[X] = half_threshold_matrix(Q, aux.lam[X], aux.rho[X])
            eps[X] = eps_schedule(aux.rho[X], config.eps0[X], config.beta)
            trace["prox_gap_" + X].append(float(np.linalg.norm(Q - new_A[X])))
            trace["prox_bound_" + X].append(
                1.5 * np.sqrt(Q.size) * (aux.lam[X] / aux.rho[X]) ** (2.0 / 3.0)
            )
            trace["r_" + X].append(float(np.linalg.norm(Ms[X] - new_A[X])))
            trace["eps_" + X].append(eps[X])
        staged = AuxState(A=new_A, W=aux.W, rho=aux.rho, lam=aux.lam, increases=aux.increases)
        new_aux = penalty_dual_update(staged, Ms, eps, config.gamma)

        bump = 0.0
        for X in BLOCKS:
            if aux.active(X):
                r = Ms[X] - new_A[X]
                bump += 0.5 * (new_aux.rho[X] + aux.rho[X]) * float((r * r).sum())
                if new_aux.rho[X] > aux.rho[X]:
                    trace["penalty_events"].append((k, X))
            trace["rho_" + X].append(new_aux.rho[X])
        aux = new_aux
        trace["dual_bump"].append(bump)
        trace["L_post"].append(augmented_lagrangian(smooth, U, V, aux))

        lam = U @ V.T
        nll = negative_log_likelihood(data.y_sum, det.p, lam, M)
        penalty = sum(aux.lam[X] * half_norm(Ms[X]) for X in BLOCKS if aux.active(X))
        trace["nll"].append(nll)
        trace["objective"].append(nll + penalty)
        trace["alpha_iters"].append(det.n_iter)
        trace["u_steps"].append(res_U.n_steps)
        trace["v_steps"].append(res_V.n_steps)
        trace["u_stalled"].append(res_U.stalled)
        trace["v_stalled"].append(res_V.stalled)
        dU = float(np.linalg.norm(U - U_old))
        dV = float(np.linalg.norm(V - V_old))
        da = float(np.linalg.norm(det.alpha - alpha_old))
        trace["delta_U"].append(dU)
        trace["delta_V"].append(dV)
        trace["delta_alpha"].append(da)
        counted = hard_pairs(data.y_sum)
        trace["min_counted_intensity"].append(float(lam[counted].min()) if counted.any() else np.inf)
        if kkt:
            res = kkt_residuals(U, V, aux, det, Z, data.y_sum, M, det.rho_p)
            trace["kkt"].append(res.as_dict())
            trace["kkt_max"].append(res.max())

        if callback is not None:
            callback(k, U, V, det)

        if (
            prev_nll is not None
            and abs(nll - prev_nll) <= config.outer_obj_tol
            and max(dU, dV, da) <= config.outer_var_tol
        ):
            converged, reason = True, "tolerance"
            break
        prev_nll = nll

    logger.info("fit finished after %d outer iterations (%s)", k, reason)
    return FitResult(
        factors=FactorPair(U, V), detection=det, aux=aux, trace=trace,
        converged=converged, reason=reason, n_iter=k,
    )


def write_trace_csv(result, path):
    """Write the per-iteration trace with a fixed column order."""
    import csv

    tr = result.trace
    cols = ["iter", "nll", "r_UU", "r_UV", "r_VV", "rho_UU", "rho_UV", "rho_VV", "kkt_max"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(len(tr["nll"])):
            kkt_max = tr["kkt_max"][i] if tr["kkt_max"] else np.nan
            w.writerow(
                [i + 1, repr(tr["nll"][i])]
                + [repr(float(tr["r_" + X][i])) for X in BLOCKS]
                + [repr(float(tr["rho_" + X][i])) for X in BLOCKS]
                + [repr(float(kkt_max))]
            )
