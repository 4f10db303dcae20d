"""Shared data model for the sparse N-mixture factorization solver.

Indexing convention: the pair (i, j) of an I x J grid maps to the flat
index ``r = i * J + j`` (row-major). Every vectorised quantity over pairs
(detection probabilities, feature rows, duals) uses this order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

BLOCKS = ("UU", "UV", "VV")


def flatten_index(i, j, J, I=None):
    """Return the row-major flat index of pair ``(i, j)``."""
    if J <= 0:
        raise ValueError("J must be positive")
    if j < 0 or j >= J or i < 0 or (I is not None and i >= I):
        raise IndexError(f"pair ({i}, {j}) out of range")
    return i * J + j


def unflatten_index(r, J, I=None):
    """Inverse of :func:`flatten_index`."""
    if J <= 0:
        raise ValueError("J must be positive")
    if r < 0 or (I is not None and r >= I * J):
        raise IndexError(f"flat index {r} out of range")
    return divmod(r, J)


def compute_y_sum(data):
    """Replicate sum of the counts at each pair.

    Missing entries contribute nothing unless they have been filled by
    imputation, in which case the imputed values are summed as well.
    """
    y = data.y
    if data.filled:
        return y.sum(axis=2)
    return np.where(data.missing, 0, y).sum(axis=2)


@dataclass(frozen=True)
class CountData:
    """Observed I x J x M count tensor with an explicit missing mask.

    ``y`` holds integers as observed; after :func:`sparsenmix.admm.impute_missing`
    the masked slots hold real-valued conditional expectations and ``filled``
    is set.
    """

    y: np.ndarray
    missing: np.ndarray | None = None
    filled: bool = False
    y_sum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim == 2:
            y = y[:, :, None]
        if y.ndim != 3:
            raise ValueError(f"counts must be I x J x M, got shape {y.shape}")
        if min(y.shape) < 1:
            raise ValueError("all dimensions must be positive")
        missing = self.missing
        if missing is None:
            missing = np.zeros(y.shape, dtype=bool)
        missing = np.asarray(missing, dtype=bool)
        if missing.ndim == 2:
            missing = missing[:, :, None]
        if missing.shape != y.shape:
            raise ValueError("missing mask shape does not match counts")
        if missing.all():
            raise ValueError("missing rate must be below 1")
        observed = y[~missing]
        if not np.all(np.isfinite(observed)) or np.any(observed < 0):
            raise ValueError("observed counts must be finite and nonnegative")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "y_sum", compute_y_sum(self))

    @property
    def I(self):
        return self.y.shape[0]

    @property
    def J(self):
        return self.y.shape[1]

    @property
    def M(self):
        return self.y.shape[2]

    @property
    def missing_rate(self):
        return float(self.missing.mean())

    def observed_pairs(self):
        """Boolean I x J mask of pairs with at least one non-missing replicate."""
        return ~self.missing.all(axis=2)


def as_feature_matrix(Z, I, J):
    """Validate a (I*J) x R feature matrix and return it as float64."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2 or Z.shape[0] != I * J:
        raise ValueError(f"feature matrix must have {I * J} rows, got shape {Z.shape}")
    if Z.shape[1] < 1:
        raise ValueError("feature dimension R must be at least 1")
    if not np.all(np.isfinite(Z)):
        raise ValueError("feature matrix has non-finite entries")
    return Z


@dataclass
class FactorPair:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if self.U.shape[1] != self.V.shape[1]:
            raise ValueError("U and V must share the rank dimension")
        if np.any(self.U < 0) or np.any(self.V < 0):
            raise ValueError("factors must be nonnegative")

    @property
    def F(self):
        return self.U.shape[1]

    def intensity(self):
        return self.U @ self.V.T


@dataclass
class DetectionState:
    alpha: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    n_iter: int = 0
    converged: bool = True
    rho_p: float | None = None


@dataclass
class AuxState:
    """Per-block auxiliary matrices, scaled duals and penalties.

    Dict keys are the block names in :data:`BLOCKS`.
    """

    A: dict
    W: dict
    rho: dict
    lam: dict
    increases: dict = field(default_factory=lambda: {X: 0 for X in BLOCKS})

    def active(self, X):
        """A block with zero weight and zero penalty is inert."""
        return self.rho[X] > 0

    def B(self, X):
        return self.A[X] - self.W[X]

    def H(self, X):
        """Unscaled dual, derived on demand."""
        return self.rho[X] * self.W[X]

    def copy(self):
        return AuxState(
            A={X: a.copy() for X, a in self.A.items()},
            W={X: w.copy() for X, w in self.W.items()},
            rho=dict(self.rho),
            lam=dict(self.lam),
            increases=dict(self.increases),
        )


def default_step_size(M):
    """Initial projected-gradient step keyed by replicate count.

    1e-3, 1e-4 and 1e-5 at M = 1, 5, 10; log-linear interpolation between
    those anchors and flat extrapolation outside them.
    """
    anchors_m = np.array([1.0, 5.0, 10.0])
    anchors_t = np.log10([1e-3, 1e-4, 1e-5])
    return float(10 ** np.interp(float(M), anchors_m, anchors_t))


@dataclass
class SolverConfig:
    """Hyperparameters of the sparse ADMM solver and its inner loops.

    Per-block quantities (``lam``, ``rho0``, ``eps0``) are dicts keyed by
    block name. Setting both ``lam[X]`` and ``rho0[X]`` to zero makes block
    X inert, which is how the unregularized N-mixture baseline runs.
    """

    F: int = 8
    gamma: float = 2.0
    p0: float = 0.5
    lam: dict = field(default_factory=lambda: {X: 1e-2 for X in BLOCKS})
    rho0: dict = field(default_factory=lambda: {X: 1e-3 for X in BLOCKS})
    eps0: dict = field(default_factory=lambda: {X: 1.0 for X in BLOCKS})
    beta: float = 0.6
    delta_floor: float = 1e-10
    max_outer: int = 100
    S_max: int = 3000
    step_tol: float = 1e-7
    t_max_U: float | None = None
    t_max_V: float | None = None
    armijo_c: float = 1e-5
    t_min: float = 1e-7
    rho_p: float = 1.0
    inner_alpha_tol: float = 1e-6
    inner_alpha_max_iter: int = 2000
    outer_obj_tol: float = 1e-7
    outer_var_tol: float = 1e-7
    seed: int = 0
    engine: str = "compiled"

    def __post_init__(self):
        for name in ("lam", "rho0", "eps0"):
            value = getattr(self, name)
            if not isinstance(value, dict):
                setattr(self, name, {X: float(value) for X in BLOCKS})
            else:
                missing = set(BLOCKS) - set(value)
                if missing:
                    raise ValueError(f"{name} missing blocks {sorted(missing)}")
                setattr(self, name, {X: float(value[X]) for X in BLOCKS})
        self.validate()

    def validate(self):
        if int(self.F) < 1:
            raise ValueError("rank F must be at least 1")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if not 0 < self.p0 < 1:
            raise ValueError("p0 must lie in (0, 1)")
        if not 0.5 < self.beta < 2.0 / 3.0:
            raise ValueError("beta must lie strictly inside (1/2, 2/3)")
        for X in BLOCKS:
            lam, rho = self.lam[X], self.rho0[X]
            if lam == 0 and rho == 0:
                continue
            if not (lam > 0 and rho > 0):
                raise ValueError(
                    f"block {X}: lambda and rho0 must both be positive (or both zero for an inert block)"
                )
            if not self.eps0[X] > 0:
                raise ValueError(f"block {X}: eps0 must be positive")
        positives = (
            "delta_floor", "armijo_c", "t_min", "step_tol", "rho_p",
            "inner_alpha_tol", "outer_obj_tol", "outer_var_tol",
        )
        for name in positives:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_outer", "S_max", "inner_alpha_max_iter"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.engine not in ("compiled", "numpy"):
            raise ValueError("engine must be 'compiled' or 'numpy'")
        for name in ("t_max_U", "t_max_V"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive")

    def step_sizes(self, M):
        t = default_step_size(M)
        return (self.t_max_U or t, self.t_max_V or t)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def penalized(self):
        return any(self.rho0[X] > 0 for X in BLOCKS)


@dataclass
class FitResult:
    factors: FactorPair
    detection: DetectionState | None
    aux: AuxState | None
    trace: dict
    converged: bool
    reason: str
    n_iter: int

    @property
    def U(self):
        return self.factors.U

    @property
    def V(self):
        return self.factors.V

    @property
    def alpha(self):
        return None if self.detection is None else self.detection.alpha

    def penalty_increase_events(self):
        """List of ``(iteration, block)`` pairs at which a penalty grew."""
        return [tuple(e) for e in self.trace.get("penalty_events", [])]

