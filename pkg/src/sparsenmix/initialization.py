"""Starting points for the factor, detection and auxiliary blocks."""

import warnings

import numpy as np

from .types import BLOCKS, AuxState, DetectionState, FactorPair

ZERO_DATA_FILL = 1e-2


def truncated_svd(L, F):
    """Rank-F SVD of ``L`` with a deterministic sign convention.

    Each left singular vector is flipped (together with its right partner)
    so that its largest-magnitude entry is positive.
    """
    Uf, s, Vt = np.linalg.svd(np.asarray(L, dtype=float), full_matrices=False)
    Uf, s, Vf = Uf[:, :F], s[:F], Vt[:F].T
    idx = np.argmax(np.abs(Uf), axis=0)
    signs = np.sign(Uf[idx, np.arange(Uf.shape[1])])
    signs[signs == 0] = 1.0
    return Uf * signs, s, Vf * signs


def scale_aware_init(y_sum, M, p0, F):
    """Nonnegative factors from the rank-F SVD of ``y_sum / (M p0)``.

    Returns ``U0 = |U_F| S^(1/2)`` and ``V0 = |V_F| S^(1/2)``. All-zero data
    falls back to a uniform ``1e-2`` fill.
    """
    y_sum = np.asarray(y_sum, dtype=float)
    I, J = y_sum.shape
    if F > min(I, J):
        raise ValueError(f"rank {F} exceeds min(I, J) = {min(I, J)}")
    if not 0 < p0 < 1:
        raise ValueError("p0 must lie in (0, 1)")
    if not np.any(y_sum):
        return FactorPair(np.full((I, F), ZERO_DATA_FILL), np.full((J, F), ZERO_DATA_FILL))
    Uf, s, Vf = truncated_svd(y_sum / (M * p0), F)
    root = np.sqrt(s)
    return FactorPair(np.abs(Uf) * root, np.abs(Vf) * root)


def lift_to_floor(factors, y_sum, delta_floor):
    """Shift both factors up uniformly until counted intensities clear the floor."""
    U, V = factors.U, factors.V
    counted = np.asarray(y_sum) > 0
    if not counted.any():
        return factors
    lam = U @ V.T
    if lam[counted].min() >= delta_floor:
        return factors
    c = np.sqrt(delta_floor / U.shape[1]) * 10.0
    while ((U + c) @ (V + c).T)[counted].min() < delta_floor:
        c *= 10.0
    return FactorPair(U + c, V + c)


def init_alpha(Z, rng):
    """Uniform [0, 1] coefficients scaled so that ``max(Z alpha) <= 1``."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    Z = np.asarray(Z, dtype=float)
    alpha = rng.uniform(0.0, 1.0, size=Z.shape[1])
    if not np.any(Z):
        warnings.warn("feature matrix is zero; initial detection probabilities are 0", RuntimeWarning, stacklevel=2)
        return alpha
    if (Z @ alpha).max() <= 0.0:
        # Signed features can make Z alpha nonpositive; aim at the largest row.
        r = np.argmax((Z * Z).sum(axis=1))
        alpha = Z[r] / (Z[r] @ Z[r])
    top = (Z @ alpha).max()
    if top > 1.0:
        alpha = alpha / top
    return alpha


def init_detection(Z, rng):
    alpha = init_alpha(Z, rng)
    p = np.clip(Z @ alpha, 0.0, 1.0)
    return DetectionState(alpha=alpha, p=p, omega=np.zeros_like(p))


def block_matrices(U, V):
    return {"UU": U @ U.T, "UV": U @ V.T, "VV": V @ V.T}


def init_aux(U0, V0, config):
    """Feasible start: ``A_X = M_X(U0, V0)``, zero scaled duals."""
    Ms = block_matrices(U0, V0)
    return AuxState(
        A={X: Ms[X].copy() for X in BLOCKS},
        W={X: np.zeros_like(Ms[X]) for X in BLOCKS},
        rho=dict(config.rho0),
        lam=dict(config.lam),
    )
