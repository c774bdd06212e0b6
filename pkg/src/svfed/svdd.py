"""Support Vector Data Description with a Gaussian kernel.

The dual problem

    minimise    sum_ij beta_i beta_j k(x_i, x_j)
    subject to  sum_i beta_i = 1,  0 <= beta_i <= C

is solved by maximal-violating-pair SMO (see ``_smo_ext.pyx`` and
``_smo_py.py``).  A point is scored by how far inside the learnt sphere it
sits: ``score(x) = radius_squared - R2(x)`` with

    R2(x) = 1 - 2 sum_j beta_j k(x_j, x) + sum_ij beta_i beta_j k(x_i, x_j).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from . import _backend
from .errors import ConfigurationError, ConvergenceError, InvalidInputError

__all__ = [
    "KernelParams",
    "SvddHyperparams",
    "SolverSettings",
    "SvddModel",
    "Verdict",
    "gaussian_kernel",
    "kernel_matrix",
    "solve_dual",
    "train_svdd",
    "train_ocsvm_baseline",
    "ocsvm_c",
    "r_squared",
    "score",
    "predict",
    "is_inlier",
    "dual_objective",
]

# curvature floor for the 1-D step when two points coincide
_MIN_CURVATURE = 1e-12


class Verdict(str, enum.Enum):
    INLIER = "inlier"
    OUTLIER = "outlier"


@dataclass(frozen=True)
class KernelParams:
    gamma: float

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigurationError(f"gamma must be positive and finite, got {self.gamma}")


@dataclass(frozen=True)
class SvddHyperparams:
    c: float
    gamma: float = 1.0

    def __post_init__(self):
        if not (0 < self.c <= 1):
            raise ConfigurationError(f"C must lie in (0, 1], got {self.c}")
        KernelParams(self.gamma)

    def check_feasible(self, n: int) -> None:
        # sum(beta) = 1 needs n * C >= 1; tolerate representation error of C = 1/n
        if self.c * n < 1 - 1e-12:
            raise ConfigurationError(
                f"infeasible C={self.c:g} for n={n} points (C*n={self.c * n:g} < 1)"
            )


@dataclass(frozen=True)
class SolverSettings:
    kkt_tolerance: float = 1e-6
    max_iterations: Optional[int] = None  # None -> 100 * n**2
    sparsity_threshold: float = 1e-8

    def __post_init__(self):
        if not self.kkt_tolerance > 0:
            raise ConfigurationError("kkt_tolerance must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be a positive integer")
        if not self.sparsity_threshold > 0:
            raise ConfigurationError("sparsity_threshold must be positive")

    def iteration_cap(self, n: int) -> int:
        return self.max_iterations if self.max_iterations is not None else 100 * n * n


DEFAULT_SETTINGS = SolverSettings()


def _as_matrix(data, name="data") -> np.ndarray:
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return X


def gaussian_kernel(a, b, params) -> float:
    """``exp(-gamma * ||a - b||^2)`` for two single vectors.

    ``params`` may be a :class:`KernelParams` or a bare gamma.
    """
    gamma = params.gamma if isinstance(params, (KernelParams, SvddHyperparams)) else float(params)
    KernelParams(gamma)
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size == 0:
        raise InvalidInputError(f"dimension mismatch: {a.size} vs {b.size}")
    diff = a - b
    return math.exp(-gamma * float(diff @ diff))


def kernel_matrix(A, B, gamma: float) -> np.ndarray:
    """Gaussian kernel between the rows of ``A`` and ``B``.

    Squared distances come from explicit differences, so identical rows give
    exactly 1.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


def dual_objective(beta, K) -> float:
    beta = np.asarray(beta, dtype=np.float64)
    return float(beta @ K @ beta)


def solve_dual(K, c: float, settings: SolverSettings = DEFAULT_SETTINGS, backend=None):
    """Solve the SVDD dual for a precomputed Gram matrix.

    Returns ``(beta, iterations, violation)``; raises :class:`ConvergenceError`
    if the iteration cap is reached first.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    n = K.shape[0]
    beta = np.full(n, 1.0 / n)
    if n == 1:
        return beta, 0, 0.0
    grad = 2.0 * (K @ beta)
    cap = settings.iteration_cap(n)
    loop = _backend.get_loop(backend)
    iterations, violation = loop(K, beta, grad, float(c), float(settings.kkt_tolerance),
                                 int(cap), _MIN_CURVATURE)
    if violation >= settings.kkt_tolerance:
        raise ConvergenceError(
            f"SMO did not reach KKT tolerance {settings.kkt_tolerance:g} in {iterations} "
            f"iterations (violation {violation:.3g})",
            beta=beta, violation=violation, iterations=iterations,
        )
    return beta, int(iterations), float(violation)


@dataclass(frozen=True, eq=False)
class SvddModel:
    """A trained sphere: support vectors, their multipliers and derived constants."""

    support_vectors: np.ndarray
    multipliers: np.ndarray
    hyperparams: SvddHyperparams
    self_term: float
    radius_squared: float
    margin_mask: np.ndarray = field(repr=False)  # True where 0 < beta < C
    iterations: int = 0

    def __post_init__(self):
        for arr in (self.support_vectors, self.multipliers, self.margin_mask):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def n_support(self) -> int:
        return self.support_vectors.shape[0]

    @property
    def gamma(self) -> float:
        return self.hyperparams.gamma

    @property
    def c(self) -> float:
        return self.hyperparams.c

    def r_squared(self, x):
        return r_squared(self, x)

    def score(self, x):
        return score(self, x)

    def predict(self, x):
        return predict(self, x)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "c": self.c,
            "support_vectors": self.support_vectors.tolist(),
            "multipliers": self.multipliers.tolist(),
            "margin_mask": self.margin_mask.tolist(),
            "self_term": self.self_term,
            "radius_squared": self.radius_squared,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvddModel":
        sv = np.asarray(d["support_vectors"], dtype=np.float64)
        beta = np.asarray(d["multipliers"], dtype=np.float64)
        mask = np.asarray(d.get("margin_mask", [True] * len(beta)), dtype=bool)
        return cls(sv, beta, SvddHyperparams(d["c"], d["gamma"]),
                   float(d["self_term"]), float(d["radius_squared"]), mask)

    def same_as(self, other: "SvddModel") -> bool:
        """Bitwise equality of every stored array and constant."""
        return (
            self.hyperparams == other.hyperparams
            and np.array_equal(self.support_vectors, other.support_vectors)
            and np.array_equal(self.multipliers, other.multipliers)
            and self.self_term == other.self_term
            and self.radius_squared == other.radius_squared
        )


def _build_model(X, beta, hp, settings, iterations=0) -> SvddModel:
    keep = beta > settings.sparsity_threshold
    sv = X[keep]
    raw = beta[keep]
    margin = raw < hp.c
    b = raw / raw.sum()
    b = np.minimum(b, hp.c)
    K_sv = kernel_matrix(sv, sv, hp.gamma)
    self_term = float(b @ K_sv @ b)
    r2_sv = 1.0 - 2.0 * (K_sv @ b) + self_term
    if margin.any():
        radius_squared = float(np.median(r2_sv[margin]))
    else:
        radius_squared = float(np.min(r2_sv))
    return SvddModel(sv.copy(), b, hp, self_term, max(radius_squared, 0.0), margin, iterations)


def train_svdd(data, hp: SvddHyperparams, settings: SolverSettings = DEFAULT_SETTINGS,
               backend=None) -> SvddModel:
    """Fit the minimal enclosing sphere of ``data`` in Gaussian feature space."""
    X = _as_matrix(data)
    n = X.shape[0]
    hp.check_feasible(n)
    if n == 1:
        return SvddModel(X.copy(), np.ones(1), hp, 1.0, 0.0, np.array([hp.c > 1.0]))
    K = kernel_matrix(X, X, hp.gamma)
    beta, iterations, _ = solve_dual(K, hp.c, settings, backend)
    return _build_model(X, beta, hp, settings, iterations)


def ocsvm_c(nu: float, n: int) -> float:
    if not (0 < nu < 1):
        raise ConfigurationError(f"nu must lie in (0, 1), got {nu}")
    if n < 1:
        raise ConfigurationError("need at least one training point")
    return min(1.0, 1.0 / (nu * n))


def train_ocsvm_baseline(data, nu: float, gamma: float = 1.0,
                         settings: SolverSettings = DEFAULT_SETTINGS, backend=None) -> SvddModel:
    """One-class SVM through its dual equivalence with SVDD, C = 1/(nu*n).

    With a Gaussian kernel k(x, x) = 1, so the two duals coincide and the
    decision functions differ only by a monotone map; rankings (and AUC) agree.
    """
    X = _as_matrix(data)
    return train_svdd(X, SvddHyperparams(ocsvm_c(nu, X.shape[0]), gamma), settings, backend)


def _query(model: SvddModel, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise InvalidInputError(
            f"dimension mismatch: model has {model.dim} features, got shape {x.shape}"
        )
    return X, single


def r_squared(model: SvddModel, x):
    """Squared feature-space distance from the sphere centre (scalar or array)."""
    X, single = _query(model, x)
    k = kernel_matrix(X, model.support_vectors, model.gamma)
    r2 = 1.0 - 2.0 * (k @ model.multipliers) + model.self_term
    return float(r2[0]) if single else r2


def score(model: SvddModel, x):
    """``radius_squared - R2(x)``; non-negative inside the sphere."""
    X, single = _query(model, x)
    s = model.radius_squared - r_squared(model, X)
    return float(s[0]) if single else s


def is_inlier(model: SvddModel, X) -> np.ndarray:
    return np.atleast_1d(score(model, X)) >= 0.0


def predict(model: SvddModel, x) -> Verdict:
    return Verdict.INLIER if score(model, x) >= 0.0 else Verdict.OUTLIER
