"""Stationary isotropic and anisotropic covariance functions.

The Matérn family is parameterized as

    M(h) = variance * 2**(1 - k) / Gamma(k) * (h / range)**k * K_k(h / range)

with ``K_k`` the modified Bessel function of the second kind. ``k = 0.5``
gives the exponential covariance. The Gaussian covariance
``variance * exp(-(h / range)**2)`` is provided separately.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from .errors import ParameterDomainError, ShapeError

# exp(-700) is still a normal double; beyond it the Bessel tail is treated as 0
UNDERFLOW_ARGUMENT = 700.0

CORRELATION_FAMILIES = ("exponential", "gaussian", "matern")


@dataclass(frozen=True)
class IsotropicParams:
    variance: float
    range: float
    smoothness: float = 0.5

    def __post_init__(self):
        for name in ("variance", "range", "smoothness"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ParameterDomainError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True, eq=False)
class AnisotropyMatrix:
    """Symmetric positive-definite lag-scaling matrix ``A``."""

    matrix: np.ndarray

    def __post_init__(self):
        A = np.array(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"anisotropy matrix must be square, got shape {A.shape}")
        scale = max(np.max(np.abs(A)), np.finfo(float).tiny)
        if np.max(np.abs(A - A.T)) > 1e-12 * scale:
            raise ParameterDomainError("anisotropy matrix is not symmetric")
        try:
            chol = linalg.cholesky(A, lower=True)
        except linalg.LinAlgError:
            raise ParameterDomainError("anisotropy matrix is not positive definite") from None
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "_chol", chol)

    @property
    def cholesky(self):
        return self._chol


def matern_correlation(x, smoothness):
    """Matérn correlation at scaled distance ``x = h / range``.

    Broadcasts over ``x`` and ``smoothness``. Evaluated in log space with the
    exponentially scaled Bessel function so that large orders do not overflow.
    """
    x = np.asarray(x, dtype=float)
    nu = np.asarray(smoothness, dtype=float)
    x, nu = np.broadcast_arrays(x, nu)
    out = np.zeros(x.shape)
    zero = x == 0
    out[zero] = 1.0
    mid = (~zero) & (x <= UNDERFLOW_ARGUMENT)
    if np.any(mid):
        xm, vm = x[mid], nu[mid]
        log_val = (
            (1.0 - vm) * np.log(2.0)
            - special.gammaln(vm)
            + vm * np.log(xm)
            + np.log(special.kve(vm, xm))
            - xm
        )
        out[mid] = np.minimum(np.exp(log_val), 1.0)
    return out if out.ndim else float(out)


def correlation(x, family, smoothness=0.5):
    """Isotropic correlation ``g(x)`` for one of :data:`CORRELATION_FAMILIES`."""
    x = np.asarray(x, dtype=float)
    if family == "exponential":
        out = np.exp(-x)
    elif family == "gaussian":
        out = np.exp(-(x * x))
    elif family == "matern":
        return matern_correlation(x, smoothness)
    else:
        raise ParameterDomainError(f"unknown correlation family {family!r}")
    return out if out.ndim else float(out)


def _check_lag(h):
    h = np.asarray(h, dtype=float)
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise ParameterDomainError("distances must be finite and nonnegative")
    return h


def matern(h, params: IsotropicParams):
    h = _check_lag(h)
    return params.variance * matern_correlation(h / params.range, params.smoothness)


def exponential(h, variance, range_):
    IsotropicParams(variance, range_)
    h = _check_lag(h)
    return variance * np.exp(-h / range_)


def gaussian_corr(h, variance, range_):
    IsotropicParams(variance, range_)
    h = _check_lag(h)
    return variance * np.exp(-((h / range_) ** 2))


def aniso_distance(h, A):
    """Return ``sqrt(h' A^{-1} h)`` for lag vector(s) ``h`` of shape (..., d).

    ``A`` may be an :class:`AnisotropyMatrix` or a raw array. The inverse is
    never formed; a triangular solve against the Cholesky factor is used.
    """
    if not isinstance(A, AnisotropyMatrix):
        A = AnisotropyMatrix(A)
    h = np.asarray(h, dtype=float)
    d = A.matrix.shape[0]
    if h.shape[-1] != d:
        raise ShapeError(f"lag dimension {h.shape[-1]} does not match matrix dimension {d}")
    flat = h.reshape(-1, d).T
    z = linalg.solve_triangular(A.cholesky, flat, lower=True)
    out = np.sqrt(np.sum(z * z, axis=0)).reshape(h.shape[:-1])
    return out if out.ndim else float(out)


def nnd_check(C, tol=1e-8):
    """Check nonnegative definiteness of a symmetric matrix.

    Returns ``(ok, min_eigenvalue)`` where ``ok`` is true iff the smallest
    eigenvalue is at least ``-tol * max(diag(C))``. For a real symmetric
    matrix the real quadratic form is sufficient; the complex form splits into
    two real forms.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {C.shape}")
    scale = max(np.max(np.abs(C)), np.finfo(float).tiny) if C.size else 1.0
    if C.size and np.max(np.abs(C - C.T)) > 1e-10 * scale:
        raise ShapeError("matrix is not symmetric")
    if C.size == 0:
        return True, 0.0
    lam_min = float(linalg.eigvalsh(C, subset_by_index=[0, 0])[0])
    threshold = -tol * max(float(np.max(np.diag(C))), 0.0)
    return lam_min >= threshold, lam_min


@dataclass(frozen=True)
class StationarySpec:
    """Stationary covariance ``variance * g(dist / range)``.

    ``dist`` is Euclidean, or ``sqrt(h' A^{-1} h)`` when an anisotropy matrix
    is given.
    """

    variance: float
    range: float
    family: str = "exponential"
    smoothness: float = 0.5
    anisotropy: AnisotropyMatrix | None = None

    def __post_init__(self):
        IsotropicParams(self.variance, self.range, self.smoothness)
        if self.family not in CORRELATION_FAMILIES:
            raise ParameterDomainError(f"unknown correlation family {self.family!r}")
        if self.anisotropy is not None and not isinstance(self.anisotropy, AnisotropyMatrix):
            object.__setattr__(self, "anisotropy", AnisotropyMatrix(self.anisotropy))

    def cross(self, X1, X2, covariates1=None, covariates2=None):
        lag = X1[:, None, :] - X2[None, :, :]
        if self.anisotropy is None:
            dist = np.sqrt(np.sum(lag * lag, axis=-1))
        else:
            dist = aniso_distance(lag, self.anisotropy)
        return self.variance * correlation(dist / self.range, self.family, self.smoothness)

    def variance_at(self, X, covariates=None):
        return np.full(len(X), float(self.variance))

    def to_dict(self):
        out = {
            "type": "stationary",
            "variance": self.variance,
            "range": self.range,
            "family": self.family,
            "smoothness": self.smoothness,
        }
        if self.anisotropy is not None:
            out["anisotropy"] = self.anisotropy.matrix.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(
            variance=float(d["variance"]),
            range=float(d["range"]),
            family=d.get("family", "exponential"),
            smoothness=float(d.get("smoothness", 0.5)),
            anisotropy=None if d.get("anisotropy") is None else AnisotropyMatrix(np.array(d["anisotropy"])),
        )
