"""Synthetic bipartite count data from a sparse Poisson-Binomial hierarchy.

Generation order (all draws from one seeded ``numpy.random.Generator``):

1. ``U0`` (I x F) and ``V0`` (J x F) entries ~ U(0, gamma_scale);
   each entry zeroed when an independent U(0, 1) draw is below ``sparsity``;
   an all-zero row gets one U(0, gamma_scale) entry at a random column.
2. ``Z`` ~ U(0, 1) with rows normalised to unit sum; ``alpha0`` ~ U(0, 1),
   divided by ``max(Z alpha0)`` if that exceeds 1.
3. ``N_ijm ~ Poisson(Lambda_ij)`` and ``y_ijm ~ Binomial(N_ijm, P_ij)``.
4. Each ``(i, j, m)`` is masked independently with probability ``missing_rate``.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .types import CountData


@dataclass(frozen=True)
class GeneratorParams:
    I: int = 30
    J: int = 30
    F: int = 8
    M: int = 1
    R: int = 3
    gamma_scale: float = 15.0
    sparsity: float = 0.8
    missing_rate: float = 0.001
    seed: int = 0
    force_p: float | None = None

    def validate(self):
        for name in ("I", "J", "F", "M", "R"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0 <= self.sparsity < 1:
            raise ValueError("sparsity must lie in [0, 1)")
        if not 0 <= self.missing_rate < 1:
            raise ValueError("missing_rate must lie in [0, 1)")
        if not self.gamma_scale >= 0:
            raise ValueError("gamma_scale must be nonnegative")
        if self.force_p is not None and not 0 <= self.force_p <= 1:
            raise ValueError("force_p must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class SyntheticTruth:
    U0: np.ndarray
    V0: np.ndarray
    alpha0: np.ndarray
    P_true: np.ndarray
    Lambda_true: np.ndarray
    params: GeneratorParams
    realized_sparsity: float = 0.0
    latent: np.ndarray | None = field(default=None, repr=False)


def _sparse_factor(rng, n, F, scale, sparsity):
    X = rng.uniform(0.0, scale, size=(n, F))
    X[rng.uniform(size=(n, F)) < sparsity] = 0.0
    zeroed = float((X == 0).mean())
    for i in np.flatnonzero(~X.any(axis=1)):
        X[i, rng.integers(F)] = rng.uniform(0.0, scale)
    return X, zeroed


def generate(params=None, **overrides):
    """Draw ``(CountData, Z, SyntheticTruth)`` for the given parameters."""
    params = params or GeneratorParams()
    if overrides:
        params = GeneratorParams(**{**params.to_dict(), **overrides})
    params.validate()
    rng = np.random.default_rng(params.seed)
    I, J, F, M, R = params.I, params.J, params.F, params.M, params.R

    U0, zu = _sparse_factor(rng, I, F, params.gamma_scale, params.sparsity)
    V0, zv = _sparse_factor(rng, J, F, params.gamma_scale, params.sparsity)
    realized = (zu * I + zv * J) / (I + J)

    Z = rng.uniform(0.0, 1.0, size=(I * J, R))
    Z /= Z.sum(axis=1, keepdims=True)
    alpha0 = rng.uniform(0.0, 1.0, size=R)
    top = (Z @ alpha0).max()
    if top > 1.0:
        alpha0 /= top
    P = np.clip(Z @ alpha0, 0.0, 1.0).reshape(I, J)
    if params.force_p is not None:
        P = np.full((I, J), float(params.force_p))

    Lam = U0 @ V0.T
    N = rng.poisson(np.broadcast_to(Lam[:, :, None], (I, J, M)))
    y = rng.binomial(N, np.broadcast_to(P[:, :, None], (I, J, M)))
    missing = rng.uniform(size=(I, J, M)) < params.missing_rate
    if missing.all():
        missing.flat[0] = False

    data = CountData(y=y.astype(np.int64), missing=missing)
    truth = SyntheticTruth(
        U0=U0, V0=V0, alpha0=alpha0, P_true=P, Lambda_true=Lam,
        params=params, realized_sparsity=realized, latent=N,
    )
    return data, Z, truth
