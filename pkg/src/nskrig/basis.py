"""Empirical covariance, EOF decomposition and truncated Karhunen-Loève
covariances (matrix level only)."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InputError, ParameterDomainError, ShapeError


@dataclass(frozen=True, eq=False)
class EmpiricalCovariance:
    matrix: np.ndarray
    replicates: int


@dataclass(frozen=True, eq=False)
class EOFBasis:
    eigenvalues: np.ndarray  # descending
    vectors: np.ndarray  # columns are EOFs

    @property
    def size(self):
        return len(self.eigenvalues)


def empirical_cov(data):
    """``(1/R) sum_r y_r y_r'`` for an (R, n) array of mean-removed replicates."""
    Y = np.atleast_2d(np.asarray(data, dtype=float))
    if Y.ndim != 2:
        raise ShapeError("replicate data must be an (R, n) array")
    if Y.shape[0] == 0:
        raise InputError("empirical covariance needs at least one replicate")
    C = Y.T @ Y / Y.shape[0]
    return EmpiricalCovariance(0.5 * (C + C.T), Y.shape[0])


def eof_decompose(C):
    M = C.matrix if isinstance(C, EmpiricalCovariance) else np.asarray(C, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {M.shape}")
    scale = max(np.max(np.abs(M)), np.finfo(float).tiny)
    if np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise ShapeError("matrix is not symmetric")
    lam, E = linalg.eigh(M)
    order = np.argsort(lam)[::-1]
    # clip round-off negatives; the input is nonnegative definite by construction
    return EOFBasis(np.clip(lam[order], 0.0, None), E[:, order])


def kl_truncated_cov(basis, L):
    """Rank-``L`` covariance ``sum_{l <= L} lambda_l E_l E_l'``."""
    if not (isinstance(L, (int, np.integer)) and 1 <= L <= basis.size):
        raise ParameterDomainError(f"truncation level must be an integer in [1, {basis.size}], got {L!r}")
    E = basis.vectors[:, :L]
    C = (E * basis.eigenvalues[:L]) @ E.T
    return 0.5 * (C + C.T)


def truncation_error(basis, L):
    """Frobenius norm of the discarded spectrum, ``sqrt(sum_{l > L} lambda_l^2)``."""
    return float(np.sqrt(np.sum(basis.eigenvalues[L:] ** 2)))


@dataclass(frozen=True, eq=False)
class KLSpec:
    """Truncated expansion as a covariance over a fixed location set.

    Only defined at the locations the basis was computed on; queries are
    matched exactly against ``locations``.
    """

    locations: np.ndarray
    basis: EOFBasis
    rank: int

    def __post_init__(self):
        if len(self.locations) != self.basis.size:
            raise ShapeError("one location per EOF row is required")
        object.__setattr__(self, "_matrix", kl_truncated_cov(self.basis, self.rank))
        object.__setattr__(self, "_index", {tuple(np.asarray(p, float)): i for i, p in enumerate(self.locations)})

    def _rows(self, X):
        try:
            return np.array([self._index[tuple(p)] for p in np.asarray(X, float)], dtype=int)
        except KeyError as exc:
            raise InputError(f"location {exc.args[0]} is not in the expansion's location set") from None

    def cross(self, X1, X2, covariates1=None, covariates2=None):
        return self._matrix[np.ix_(self._rows(X1), self._rows(X2))]

    def variance_at(self, X, covariates=None):
        return np.diag(self._matrix)[self._rows(X)]
