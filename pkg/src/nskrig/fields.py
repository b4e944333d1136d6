"""Spatially varying parameter fields.

A kernel field maps locations to SPD kernel matrices ``Sigma(s)``; a scalar
field maps locations to positive values (standard deviation or smoothness).
Each comes in three variants: constant, mixture over basis locations, and
covariate-driven with log links.

Fields evaluate in batches: ``field.evaluate(X, covariates)`` with ``X`` of
shape (n, d) returns (n, d, d) matrices or (n,) values.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InputError, ParameterDomainError, ShapeError


def as_locations(X, d=None):
    """Coerce to a float array of shape (n, d)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1) if d in (None, 1) else X.reshape(1, -1)
    if X.ndim != 2:
        raise ShapeError(f"locations must be 2-D (n, d), got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise ShapeError(f"expected {d}-dimensional locations, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
        raise InputError(f"non-finite coordinates at location index {bad}")
    return X


# --------------------------------------------------------------------------
# spectral <-> matrix
# --------------------------------------------------------------------------

def spectral_to_matrix(eig1, eig2, angle):
    """Build 2x2 SPD matrices ``R diag(eig1, eig2) R'`` with R a rotation.

    ``angle`` is the direction of the eigenvector belonging to ``eig1``.
    Broadcasts; returns shape (..., 2, 2).
    """
    eig1, eig2, angle = np.broadcast_arrays(
        np.asarray(eig1, dtype=float), np.asarray(eig2, dtype=float), np.asarray(angle, dtype=float)
    )
    c, s = np.cos(angle), np.sin(angle)
    out = np.empty(eig1.shape + (2, 2))
    out[..., 0, 0] = eig1 * c * c + eig2 * s * s
    out[..., 1, 1] = eig1 * s * s + eig2 * c * c
    off = (eig1 - eig2) * c * s
    out[..., 0, 1] = off
    out[..., 1, 0] = off
    return out


def matrix_to_spectral(M):
    """Inverse of :func:`spectral_to_matrix` for 2x2 SPD matrices.

    Returns ``(major, minor, angle)`` with ``major >= minor`` and the angle of
    the major axis in [0, pi). Equal eigenvalues report angle 0.
    """
    M = np.asarray(M, dtype=float)
    a, b, c = M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]), M[..., 1, 1]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    major, minor = mean + rad, mean - rad
    tie = rad <= 1e-14 * np.abs(mean)
    angle = np.where(tie, 0.0, 0.5 * np.arctan2(2.0 * b, a - c))
    angle = np.mod(angle, np.pi)
    angle = np.where(angle >= np.pi, 0.0, angle)
    if major.ndim == 0:
        return float(major), float(minor), float(angle)
    return major, minor, angle


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """A d x d SPD kernel matrix; for d = 2 also viewable as an ellipse."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim == 0:
            M = M.reshape(1, 1)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ShapeError(f"kernel matrix must be square, got shape {M.shape}")
        scale = max(np.max(np.abs(M)), np.finfo(float).tiny)
        if np.max(np.abs(M - M.T)) > 1e-12 * scale:
            raise ParameterDomainError("kernel matrix is not symmetric")
        if np.min(np.linalg.eigvalsh(M)) <= 0:
            raise ParameterDomainError("kernel matrix is not positive definite")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def from_spectral(cls, eig1, eig2, angle):
        if eig1 <= 0 or eig2 <= 0:
            raise ParameterDomainError("kernel eigenvalues must be positive")
        return cls(spectral_to_matrix(eig1, eig2, angle))

    @property
    def dim(self):
        return self.matrix.shape[0]

    def spectral(self):
        if self.dim != 2:
            raise ShapeError("spectral view is defined for 2x2 kernel matrices")
        return matrix_to_spectral(self.matrix)

    def __repr__(self):
        return f"KernelMatrix({self.matrix.tolist()})"


# --------------------------------------------------------------------------
# mixture weights
# --------------------------------------------------------------------------

def default_bandwidth(basis_locations):
    """Half the minimum distance between basis locations (1.0 for M = 1)."""
    B = np.asarray(basis_locations, dtype=float)
    if len(B) < 2:
        return 1.0
    diff = B[:, None, :] - B[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return 0.5 * float(np.min(dist[np.triu_indices(len(B), 1)]))


def mixture_weights(X, basis_locations, bandwidth):
    """Normalized weights ``w_m(s) ~ exp(-||s - b_m||^2 / (2 bandwidth^2))``.

    Returns shape (n, M); rows sum to one. Normalized in log space so that
    locations far from every basis point still get finite weights.
    """
    X = np.asarray(X, dtype=float)
    B = np.asarray(basis_locations, dtype=float)
    diff = X[:, None, :] - B[None, :, :]
    logw = -np.sum(diff * diff, axis=-1) / (2.0 * bandwidth**2)
    logw -= logsumexp(logw, axis=1, keepdims=True)
    return np.exp(logw)


def _design(covariates, n, p):
    if covariates is None:
        raise InputError("covariate-driven field requires covariates at every location")
    Z = np.asarray(covariates, dtype=float)
    if Z.ndim == 1:
        Z = Z.reshape(-1, 1) if p == 1 else Z.reshape(1, -1)
    if Z.shape != (n, p):
        raise ShapeError(f"expected covariates of shape {(n, p)}, got {Z.shape}")
    missing = ~np.all(np.isfinite(Z), axis=1)
    if np.any(missing):
        raise InputError(f"missing covariate at location index {int(np.flatnonzero(missing)[0])}")
    return np.hstack([np.ones((n, 1)), Z])


# --------------------------------------------------------------------------
# kernel fields
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConstantKernelField:
    kernel: KernelMatrix

    def __post_init__(self):
        if not isinstance(self.kernel, KernelMatrix):
            object.__setattr__(self, "kernel", KernelMatrix(self.kernel))

    @property
    def dim(self):
        return self.kernel.dim

    def evaluate(self, X, covariates=None):
        X = as_locations(X, self.dim)
        return np.broadcast_to(self.kernel.matrix, (len(X), self.dim, self.dim)).copy()

    def to_dict(self):
        return {"type": "constant", "matrix": self.kernel.matrix.tolist()}


@dataclass(frozen=True, eq=False)
class MixtureKernelField:
    """``Sigma(s) = sum_m w_m(s) Sigma_m`` with Gaussian distance weights."""

    basis_locations: np.ndarray
    kernels: tuple
    bandwidth: float | None = None

    def __post_init__(self):
        B = as_locations(self.basis_locations)
        kernels = tuple(k if isinstance(k, KernelMatrix) else KernelMatrix(k) for k in self.kernels)
        if len(B) < 1 or len(kernels) != len(B):
            raise ShapeError("mixture needs one kernel per basis location and at least one basis location")
        if any(k.dim != B.shape[1] for k in kernels):
            raise ShapeError("basis kernel dimension does not match basis locations")
        if len(B) > 1:
            diff = B[:, None, :] - B[None, :, :]
            d2 = np.sum(diff * diff, axis=-1)[np.triu_indices(len(B), 1)]
            if np.any(d2 == 0):
                raise ParameterDomainError("basis locations must be distinct")
        bw = default_bandwidth(B) if self.bandwidth is None else float(self.bandwidth)
        if not bw > 0:
            raise ParameterDomainError("bandwidth must be positive")
        B.setflags(write=False)
        object.__setattr__(self, "basis_locations", B)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "bandwidth", bw)
        object.__setattr__(self, "_stack", np.stack([k.matrix for k in kernels]))

    @property
    def dim(self):
        return self.basis_locations.shape[1]

    def weights(self, X):
        return mixture_weights(as_locations(X, self.dim), self.basis_locations, self.bandwidth)

    def evaluate(self, X, covariates=None):
        W = self.weights(X)
        return np.einsum("nm,mij->nij", W, self._stack)

    def to_dict(self):
        return {
            "type": "mixture",
            "basis_locations": self.basis_locations.tolist(),
            "kernels": [k.matrix.tolist() for k in self.kernels],
            "bandwidth": self.bandwidth,
        }


@dataclass(frozen=True, eq=False)
class CovariateKernelField:
    """2-D kernel field with log-linear eigenvalues and linear angle.

    Each coefficient vector has length ``p + 1``: an intercept followed by one
    slope per covariate.
    """

    log_eig1: np.ndarray
    log_eig2: np.ndarray
    angle: np.ndarray

    def __post_init__(self):
        coefs = [np.atleast_1d(np.asarray(getattr(self, n), dtype=float)) for n in ("log_eig1", "log_eig2", "angle")]
        if len({c.shape for c in coefs}) != 1 or coefs[0].ndim != 1:
            raise ShapeError("coefficient vectors must share one length (intercept + p slopes)")
        for name, c in zip(("log_eig1", "log_eig2", "angle"), coefs):
            c.setflags(write=False)
            object.__setattr__(self, name, c)

    dim = 2

    @property
    def n_covariates(self):
        return len(self.log_eig1) - 1

    def spectral(self, X, covariates=None):
        X = as_locations(X, 2)
        D = _design(covariates, len(X), self.n_covariates)
        return np.exp(D @ self.log_eig1), np.exp(D @ self.log_eig2), D @ self.angle

    def evaluate(self, X, covariates=None):
        return spectral_to_matrix(*self.spectral(X, covariates))

    def to_dict(self):
        return {
            "type": "covariate",
            "log_eig1": self.log_eig1.tolist(),
            "log_eig2": self.log_eig2.tolist(),
            "angle": self.angle.tolist(),
        }


def kernel_field_from_dict(d):
    kind = d["type"]
    if kind == "constant":
        return ConstantKernelField(KernelMatrix(np.array(d["matrix"])))
    if kind == "mixture":
        return MixtureKernelField(
            np.array(d["basis_locations"]),
            tuple(KernelMatrix(np.array(k)) for k in d["kernels"]),
            d.get("bandwidth"),
        )
    if kind == "covariate":
        return CovariateKernelField(np.array(d["log_eig1"]), np.array(d["log_eig2"]), np.array(d["angle"]))
    raise InputError(f"unknown kernel field type {kind!r}")


def eval_kernel_field(field, s, covariates=None):
    """Kernel matrix of ``field`` at the single location ``s``."""
    s = np.asarray(s, dtype=float).reshape(1, -1)
    cov = None if covariates is None else np.asarray(covariates, dtype=float).reshape(1, -1)
    return KernelMatrix(field.evaluate(s, cov)[0])


# --------------------------------------------------------------------------
# scalar fields
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantScalarField:
    value: float

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value > 0):
            raise ParameterDomainError(f"scalar field value must be positive, got {self.value!r}")

    def evaluate(self, X, covariates=None):
        return np.full(len(as_locations(X)), float(self.value))

    def to_dict(self):
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True, eq=False)
class MixtureScalarField:
    """Convex combination of positive basis values with mixture weights."""

    basis_locations: np.ndarray
    values: np.ndarray
    bandwidth: float | None = None

    def __post_init__(self):
        B = as_locations(self.basis_locations)
        v = np.asarray(self.values, dtype=float).ravel()
        if len(v) != len(B):
            raise ShapeError("one value per basis location is required")
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ParameterDomainError("mixture scalar values must be positive")
        bw = default_bandwidth(B) if self.bandwidth is None else float(self.bandwidth)
        object.__setattr__(self, "basis_locations", B)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "bandwidth", bw)

    def evaluate(self, X, covariates=None):
        X = as_locations(X, self.basis_locations.shape[1])
        return mixture_weights(X, self.basis_locations, self.bandwidth) @ self.values

    def to_dict(self):
        return {
            "type": "mixture",
            "basis_locations": self.basis_locations.tolist(),
            "values": self.values.tolist(),
            "bandwidth": self.bandwidth,
        }


@dataclass(frozen=True, eq=False)
class CovariateScalarField:
    """``exp(b0 + b' x(s))``."""

    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        object.__setattr__(self, "coefficients", c)

    def evaluate(self, X, covariates=None):
        X = as_locations(X)
        return np.exp(_design(covariates, len(X), len(self.coefficients) - 1) @ self.coefficients)

    def to_dict(self):
        return {"type": "covariate", "coefficients": self.coefficients.tolist()}


def scalar_field_from_dict(d):
    if isinstance(d, (int, float)):
        return ConstantScalarField(float(d))
    kind = d["type"]
    if kind == "constant":
        return ConstantScalarField(float(d["value"]))
    if kind == "mixture":
        return MixtureScalarField(np.array(d["basis_locations"]), np.array(d["values"]), d.get("bandwidth"))
    if kind == "covariate":
        return CovariateScalarField(np.array(d["coefficients"]))
    raise InputError(f"unknown scalar field type {kind!r}")
