"""Count-model baselines: Poisson NMF and the unregularized N-mixture fit."""

from dataclasses import dataclass, field

import numpy as np

from .admm import fit
from .initialization import scale_aware_init
from .types import BLOCKS, FactorPair

# Smallest entry of the starting factors. Multiplicative updates cannot move
# an exact zero, so the SVD start is lifted to this relative level.
INIT_FLOOR = 1e-6
_TINY = 1e-300


def kl_divergence(y, lam):
    """Generalized KL divergence ``sum y log(y / lam) - y + lam`` (0 log 0 = 0)."""
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    pos = y > 0
    return float((y[pos] * np.log(y[pos] / lam[pos])).sum() - y.sum() + lam.sum())


@dataclass
class PoissonNMFResult:
    factors: FactorPair
    kl: list = field(default_factory=list)

    @property
    def U(self):
        return self.factors.U

    @property
    def V(self):
        return self.factors.V


def poisson_nmf(y_sum, F, iters=2000, seed=0, p0=0.5, M=1, init=None, callback=None):
    """Poisson NMF of the replicate-summed counts by multiplicative updates.

    Minimizes ``D(y_sum || U V^T)`` with the Lee-Seung KL updates, each of
    which does not increase the divergence. The start is the scale-aware SVD
    initialization shared with the other methods, lifted so every entry is
    strictly positive.

    Parameters
    ----------
    y_sum : ndarray, shape (I, J)
    F : int
    iters : int
        Number of sweeps (one U update followed by one V update).
    seed : int
        Unused by the deterministic start; kept so every method takes a seed.
    p0, M : float, int
        Scale of the shared initialization ``y_sum / (M p0)``.
    init : FactorPair, optional
    callback : callable, optional
        ``callback(sweep, U, V)`` at the start (sweep 0) and after every sweep.

    Returns
    -------
    PoissonNMFResult
        Final factors and the divergence after each sweep (``kl[0]`` is the
        starting value).
    """
    del seed
    Y = np.asarray(y_sum, dtype=float)
    if np.any(Y < 0):
        raise ValueError("counts must be nonnegative")
    if init is None:
        init = scale_aware_init(Y, M, p0, F)
    U, V = init.U.astype(float), init.V.astype(float)
    floor = INIT_FLOOR * max(U.max(), V.max(), 1.0)
    U = np.maximum(U, floor)
    V = np.maximum(V, floor)
    kl = [kl_divergence(Y, U @ V.T)]
    if callback is not None:
        callback(0, U, V)
    for s in range(1, int(iters) + 1):
        ratio = Y / np.maximum(U @ V.T, _TINY)
        U = U * (ratio @ V) / np.maximum(V.sum(axis=0), _TINY)
        ratio = Y / np.maximum(U @ V.T, _TINY)
        V = V * (ratio.T @ U) / np.maximum(U.sum(axis=0), _TINY)
        kl.append(kl_divergence(Y, U @ V.T))
        if callback is not None:
            callback(s, U, V)
    return PoissonNMFResult(FactorPair(U, V), kl)


def nmixture_config(config):
    """Copy of ``config`` with every penalty block inert."""
    zero = {X: 0.0 for X in BLOCKS}
    return config.replace(lam=dict(zero), rho0=dict(zero))


def nmixture_fit(data, Z, config, init=None, callback=None, kkt=True):
    """N-mixture baseline: the same alternating scheme on the likelihood alone."""
    return fit(data, Z, nmixture_config(config), init=init, callback=callback, kkt=kkt)
