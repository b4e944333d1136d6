"""Closed-form nonstationary covariances built from kernel-matrix fields.

For two sites with kernel matrices ``Sigma_i``, ``Sigma_j`` let
``avg = (Sigma_i + Sigma_j) / 2`` and ``Q = h' avg^{-1} h`` with ``h`` the lag.

* ``cov_H`` is the convolution of two Gaussian densities with covariances
  ``Sigma_i`` and ``Sigma_j``, i.e. the normal density of ``h`` under
  covariance ``Sigma_i + Sigma_j``.
* ``cov_PS = (2 sqrt(pi))^{-d} |avg|^{-1/2} g(sqrt(Q))``.
* ``cov_NS = sigma_i sigma_j |Sigma_i|^{1/4} |Sigma_j|^{1/4} |avg|^{-1/2} g(sqrt(Q))``,
  using smoothness ``(k_i + k_j) / 2`` when ``g`` is Matérn.

Determinants and quadratic forms come from Cholesky factors of ``avg``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterDomainError, ShapeError
from .fields import (
    ConstantKernelField,
    ConstantScalarField,
    KernelMatrix,
    as_locations,
    kernel_field_from_dict,
    matrix_to_spectral,
    scalar_field_from_dict,
)
from .stationary import CORRELATION_FAMILIES, correlation


def _logdet_chol(L):
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def pair_geometry(K1, K2, X1, X2):
    """Pairwise ``log|avg|`` and ``Q`` for kernel stacks (n1, d, d), (n2, d, d).

    Returns a dict with ``logdet_avg`` and ``Q`` of shape (n1, n2) plus
    ``logdet1`` (n1,) and ``logdet2`` (n2,).
    """
    avg = 0.5 * (K1[:, None, :, :] + K2[None, :, :, :])
    L = np.linalg.cholesky(avg)
    lag = X1[:, None, :] - X2[None, :, :]
    z = np.linalg.solve(L, lag[..., None])[..., 0]
    return {
        "logdet_avg": _logdet_chol(L),
        "Q": np.sum(z * z, axis=-1),
        "logdet1": _logdet_chol(np.linalg.cholesky(K1)),
        "logdet2": _logdet_chol(np.linalg.cholesky(K2)),
        "same": np.all(lag == 0, axis=-1),
    }


def _kernel_stack(kernel, d):
    M = kernel.matrix if isinstance(kernel, KernelMatrix) else np.asarray(kernel, dtype=float)
    M = np.atleast_2d(M)
    if M.shape != (d, d):
        raise ShapeError(f"kernel matrix shape {M.shape} does not match dimension {d}")
    return M[None]


def _points(s, s2):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    s2 = np.atleast_1d(np.asarray(s2, dtype=float))
    if s.shape != s2.shape or s.ndim != 1:
        raise ShapeError("both locations must be vectors of the same dimension")
    return s[None], s2[None]


def q_distance(s, s2, kernel_s, kernel_s2):
    """Scaled squared distance ``(s - s')' [(Sigma + Sigma')/2]^{-1} (s - s')``."""
    X1, X2 = _points(s, s2)
    d = X1.shape[1]
    g = pair_geometry(_kernel_stack(kernel_s, d), _kernel_stack(kernel_s2, d), X1, X2)
    return float(g["Q"][0, 0])


def _pair_kernels(field, s, s2, covariates):
    X1, X2 = _points(s, s2)
    c1 = c2 = None
    if covariates is not None:
        c1, c2 = (np.asarray(c, dtype=float).reshape(1, -1) for c in covariates)
    return X1, X2, field.evaluate(X1, c1), field.evaluate(X2, c2), c1, c2


def cov_H(s, s2, field, covariates=None):
    """Gaussian-kernel convolution covariance between two sites.

    ``covariates``, when the field needs them, is a pair ``(x(s), x(s'))``.
    """
    X1, X2, K1, K2, _, _ = _pair_kernels(field, s, s2, covariates)
    return float(kernel_convolution_matrix(pair_geometry(K1, K2, X1, X2), X1.shape[1])[0, 0])


def cov_PS(s, s2, field, family="gaussian", smoothness=0.5, covariates=None):
    X1, X2, K1, K2, _, _ = _pair_kernels(field, s, s2, covariates)
    geom = pair_geometry(K1, K2, X1, X2)
    return float(ps_matrix(geom, X1.shape[1], family, smoothness)[0, 0])


def cov_NS(s, s2, sigma, kernel, smoothness=None, family="exponential", covariates=None):
    """Nonstationary covariance with varying standard deviation, kernel and smoothness."""
    spec = NonstationarySpec(kernel, sigma, smoothness or ConstantScalarField(0.5), family)
    X1, X2 = _points(s, s2)
    c1 = c2 = None
    if covariates is not None:
        c1, c2 = (np.asarray(c, dtype=float).reshape(1, -1) for c in covariates)
    return float(spec.cross(X1, X2, c1, c2)[0, 0])


def kernel_convolution_matrix(geom, d):
    # normal density of h under covariance 2 * avg
    log_norm = -0.5 * d * np.log(2.0 * np.pi) - 0.5 * (geom["logdet_avg"] + d * np.log(2.0))
    return np.exp(log_norm - 0.25 * geom["Q"])


def ps_matrix(geom, d, family, smoothness=0.5):
    pref = (2.0 * np.sqrt(np.pi)) ** (-d) * np.exp(-0.5 * geom["logdet_avg"])
    return pref * correlation(np.sqrt(geom["Q"]), family, smoothness)


def ns_matrix(geom, sigma1, sigma2, family, kappa1=None, kappa2=None):
    pref = np.exp(0.25 * geom["logdet1"][:, None] + 0.25 * geom["logdet2"][None, :] - 0.5 * geom["logdet_avg"])
    nu = 0.5
    if family == "matern":
        nu = 0.5 * (kappa1[:, None] + kappa2[None, :])
    corr = correlation(np.sqrt(geom["Q"]), family, nu)
    C = sigma1[:, None] * sigma2[None, :] * pref * corr
    same = geom["same"]
    if np.any(same):
        C = np.where(same, sigma1[:, None] * sigma2[None, :], C)
    return C


# --------------------------------------------------------------------------
# covariance specifications
# --------------------------------------------------------------------------

def _check_family(family):
    if family not in CORRELATION_FAMILIES:
        raise ParameterDomainError(f"unknown correlation family {family!r}")


@dataclass(frozen=True, eq=False)
class NonstationarySpec:
    """C^NS with kernel field, standard-deviation field and smoothness field."""

    kernel: object
    sigma: object = field(default_factory=lambda: ConstantScalarField(1.0))
    smoothness: object = field(default_factory=lambda: ConstantScalarField(0.5))
    family: str = "exponential"

    def __post_init__(self):
        _check_family(self.family)
        if isinstance(self.kernel, KernelMatrix):
            object.__setattr__(self, "kernel", ConstantKernelField(self.kernel))
        for name in ("sigma", "smoothness"):
            if isinstance(getattr(self, name), (int, float)):
                object.__setattr__(self, name, ConstantScalarField(float(getattr(self, name))))

    @property
    def dim(self):
        return self.kernel.dim

    def geometry(self, X1, X2, covariates1=None, covariates2=None):
        K1 = self.kernel.evaluate(X1, covariates1)
        K2 = K1 if X2 is X1 and covariates2 is covariates1 else self.kernel.evaluate(X2, covariates2)
        return pair_geometry(K1, K2, X1, X2)

    def cross(self, X1, X2, covariates1=None, covariates2=None, geometry=None):
        geom = geometry if geometry is not None else self.geometry(X1, X2, covariates1, covariates2)
        s1 = self.sigma.evaluate(X1, covariates1)
        s2 = self.sigma.evaluate(X2, covariates2)
        k1 = k2 = None
        if self.family == "matern":
            k1 = self.smoothness.evaluate(X1, covariates1)
            k2 = self.smoothness.evaluate(X2, covariates2)
        return ns_matrix(geom, s1, s2, self.family, k1, k2)

    def variance_at(self, X, covariates=None):
        return self.sigma.evaluate(X, covariates) ** 2

    def to_dict(self):
        return {
            "type": "ns",
            "family": self.family,
            "kernel": self.kernel.to_dict(),
            "sigma": self.sigma.to_dict(),
            "smoothness": self.smoothness.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kernel_field_from_dict(d["kernel"]),
            scalar_field_from_dict(d.get("sigma", 1.0)),
            scalar_field_from_dict(d.get("smoothness", 0.5)),
            d.get("family", "exponential"),
        )


@dataclass(frozen=True, eq=False)
class PSSpec:
    """C^PS: the Gaussian-kernel prefactor with any isotropic correlation."""

    kernel: object
    family: str = "gaussian"
    smoothness: float = 0.5

    def __post_init__(self):
        _check_family(self.family)

    @property
    def dim(self):
        return self.kernel.dim

    def cross(self, X1, X2, covariates1=None, covariates2=None):
        geom = pair_geometry(self.kernel.evaluate(X1, covariates1), self.kernel.evaluate(X2, covariates2), X1, X2)
        return ps_matrix(geom, X1.shape[1], self.family, self.smoothness)

    def variance_at(self, X, covariates=None):
        K = self.kernel.evaluate(X, covariates)
        d = K.shape[-1]
        return (2.0 * np.sqrt(np.pi)) ** (-d) * np.linalg.det(K) ** -0.5

    def to_dict(self):
        return {"type": "ps", "family": self.family, "smoothness": self.smoothness, "kernel": self.kernel.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(kernel_field_from_dict(d["kernel"]), d.get("family", "gaussian"), float(d.get("smoothness", 0.5)))


@dataclass(frozen=True, eq=False)
class KernelConvolutionSpec:
    """C^H: exact convolution of spatially varying Gaussian kernels."""

    kernel: object

    @property
    def dim(self):
        return self.kernel.dim

    def cross(self, X1, X2, covariates1=None, covariates2=None):
        geom = pair_geometry(self.kernel.evaluate(X1, covariates1), self.kernel.evaluate(X2, covariates2), X1, X2)
        return kernel_convolution_matrix(geom, X1.shape[1])

    def variance_at(self, X, covariates=None):
        K = self.kernel.evaluate(X, covariates)
        d = K.shape[-1]
        return (4.0 * np.pi) ** (-d / 2) * np.linalg.det(K) ** -0.5

    def to_dict(self):
        return {"type": "h", "kernel": self.kernel.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(kernel_field_from_dict(d["kernel"]))


def build_cov_matrix(spec, locs, covariates=None, geometry=None):
    """Pairwise covariance matrix of ``spec`` at ``locs``.

    The upper triangle is mirrored so the result is exactly symmetric.
    """
    X = as_locations(locs)
    if geometry is not None:
        C = spec.cross(X, X, covariates, covariates, geometry=geometry)
    else:
        C = spec.cross(X, X, covariates, covariates)
    if not np.all(np.isfinite(C)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(C), axis=1))[0])
        raise InputError(f"non-finite covariance involving location index {bad}")
    upper = np.triu(C)
    return upper + np.triu(C, 1).T


def ellipse_records(kernel, X, sigma=None, smoothness=None, covariates=None):
    """Per-location ellipse table: columns x, y, eig1, eig2, angle, sigma, kappa."""
    X = as_locations(X, 2)
    K = kernel.evaluate(X, covariates)
    major, minor, angle = matrix_to_spectral(K)
    sig = (sigma or ConstantScalarField(1.0)).evaluate(X, covariates)
    kap = (smoothness or ConstantScalarField(0.5)).evaluate(X, covariates)
    return np.column_stack([X[:, 0], X[:, 1], major, minor, angle, sig, kap])
