"""Discrete process convolutions, the locally stationary mixture covariance,
and exact Gaussian-process simulation.

All simulators take an integer seed. Replicate ``r`` draws from
``numpy.random.default_rng([seed, r])`` so every replicate is reproducible on
its own and independent of execution order.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConditioningError, ParameterDomainError, ShapeError
from .fields import as_locations
from .stationary import CORRELATION_FAMILIES, correlation

JITTER_START = 1e-10
JITTER_STOP = 1e-6


@dataclass(frozen=True, eq=False)
class ConvolutionGrid:
    locations: np.ndarray
    noise_variance: float = 1.0

    def __post_init__(self):
        U = as_locations(self.locations)
        if len(U) < 1:
            raise ShapeError("convolution grid needs at least one node")
        if len(np.unique(U, axis=0)) != len(U):
            raise ParameterDomainError("convolution grid nodes must be distinct")
        if not (np.isfinite(self.noise_variance) and self.noise_variance >= 0):
            raise ParameterDomainError("white-noise variance must be nonnegative")
        object.__setattr__(self, "locations", U)

    def to_dict(self):
        return {"locations": self.locations.tolist(), "noise_variance": self.noise_variance}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["locations"]), float(d.get("noise_variance", 1.0)))


def default_grid(X, kernel_field, per_axis=20, noise_variance=1.0, covariates=None):
    """Regular lattice over the bounding box of ``X``.

    Each side is padded by ``max(10% of span, 3 * largest kernel sd)``.
    """
    X = as_locations(X)
    K = kernel_field.evaluate(X, covariates)
    sd = float(np.sqrt(np.max(np.linalg.eigvalsh(K))))
    lo, hi = X.min(axis=0), X.max(axis=0)
    pad = np.maximum(0.1 * (hi - lo), 3.0 * sd)
    axes = [np.linspace(a - p, b + p, per_axis) for a, b, p in zip(lo, hi, pad)]
    mesh = np.meshgrid(*axes, indexing="xy")
    return ConvolutionGrid(np.column_stack([m.ravel() for m in mesh]), noise_variance)


def gaussian_kernel_weights(X, U, K):
    """Gaussian density with covariance ``K[i]`` centred at ``X[i]``, evaluated at every ``U[l]``.

    Returns shape (n, L).
    """
    L = np.linalg.cholesky(K)
    d = X.shape[1]
    lag = X[:, None, :] - U[None, :, :]
    z = np.linalg.solve(L[:, None, :, :], lag[..., None])[..., 0]
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    log_norm = -0.5 * d * np.log(2.0 * np.pi) - 0.5 * logdet
    return np.exp(log_norm[:, None] - 0.5 * np.sum(z * z, axis=-1))


@dataclass
class FieldRealization:
    locations: np.ndarray
    values: np.ndarray  # (replicates, n)
    seed: int

    @property
    def replicates(self):
        return self.values.shape[0]


def _standard_normals(seed, replicates, size):
    out = np.empty((replicates, size))
    for r in range(replicates):
        out[r] = np.random.default_rng([seed, r]).standard_normal(size)
    return out


def simulate_discrete_convolution(field, grid, eval_locs, seed, replicates=1, covariates=None):
    """Draw ``Y(s) = sum_l K_s(s - u_l) V(u_l)`` with iid ``V ~ N(0, noise_variance)``."""
    X = np.asarray(eval_locs, dtype=float)
    if X.size == 0:
        return FieldRealization(X.reshape(0, grid.locations.shape[1]), np.zeros((replicates, 0)), seed)
    X = as_locations(X, grid.locations.shape[1])
    W = gaussian_kernel_weights(X, grid.locations, field.evaluate(X, covariates))
    V = np.sqrt(grid.noise_variance) * _standard_normals(seed, replicates, len(grid.locations))
    return FieldRealization(X, V @ W.T, seed)


def discrete_convolution_matrix(field, grid, X1, X2=None, covariates1=None, covariates2=None):
    X1 = as_locations(X1, grid.locations.shape[1])
    W1 = gaussian_kernel_weights(X1, grid.locations, field.evaluate(X1, covariates1))
    if X2 is None:
        W2 = W1
    else:
        X2 = as_locations(X2, grid.locations.shape[1])
        W2 = gaussian_kernel_weights(X2, grid.locations, field.evaluate(X2, covariates2))
    return grid.noise_variance * (W1 @ W2.T)


def discrete_convolution_cov(field, grid, s, s2, covariates=None):
    """Exact covariance of :func:`simulate_discrete_convolution` output at two sites."""
    c1 = c2 = None
    if covariates is not None:
        c1, c2 = (np.asarray(c, dtype=float).reshape(1, -1) for c in covariates)
    s = np.asarray(s, dtype=float).reshape(1, -1)
    s2 = np.asarray(s2, dtype=float).reshape(1, -1)
    return float(discrete_convolution_matrix(field, grid, s, s2, c1, c2)[0, 0])


@dataclass(frozen=True, eq=False)
class DiscreteConvolutionSpec:
    kernel: object
    grid: ConvolutionGrid

    @property
    def dim(self):
        return self.grid.locations.shape[1]

    def cross(self, X1, X2, covariates1=None, covariates2=None):
        return discrete_convolution_matrix(self.kernel, self.grid, X1, X2, covariates1, covariates2)

    def variance_at(self, X, covariates=None):
        return np.diag(self.cross(X, X, covariates, covariates)).copy()

    def to_dict(self):
        return {"type": "convolution", "kernel": self.kernel.to_dict(), "grid": self.grid.to_dict()}

    @classmethod
    def from_dict(cls, d):
        from .fields import kernel_field_from_dict

        return cls(kernel_field_from_dict(d["kernel"]), ConvolutionGrid.from_dict(d["grid"]))


# --------------------------------------------------------------------------
# locally stationary mixture
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FuentesSpec:
    """Fixed Gaussian kernel mixing orthogonal locally stationary processes.

    Node ``l`` carries an isotropic covariance with its own variance, range and
    smoothness. ``cell_volume`` multiplies the sum; leave it at 1 for the plain
    finite sum.
    """

    grid: np.ndarray
    kernel: np.ndarray
    variances: np.ndarray
    ranges: np.ndarray
    smoothness: np.ndarray | float = 0.5
    family: str = "exponential"
    cell_volume: float = 1.0

    def __post_init__(self):
        U = as_locations(self.grid)
        L = len(U)
        var = np.broadcast_to(np.asarray(self.variances, dtype=float), (L,)).copy()
        rng_ = np.broadcast_to(np.asarray(self.ranges, dtype=float), (L,)).copy()
        nu = np.broadcast_to(np.asarray(self.smoothness, dtype=float), (L,)).copy()
        if np.any(var <= 0) or np.any(rng_ <= 0) or np.any(nu <= 0):
            raise ParameterDomainError("local covariance parameters must be positive")
        if self.family not in CORRELATION_FAMILIES:
            raise ParameterDomainError(f"unknown correlation family {self.family!r}")
        K = np.atleast_2d(np.asarray(self.kernel, dtype=float))
        if K.shape != (U.shape[1], U.shape[1]):
            raise ShapeError("kernel matrix dimension does not match grid")
        for name, val in (("grid", U), ("variances", var), ("ranges", rng_), ("smoothness", nu), ("kernel", K)):
            object.__setattr__(self, name, val)

    @property
    def dim(self):
        return self.grid.shape[1]

    def cross(self, X1, X2, covariates1=None, covariates2=None):
        X1 = as_locations(X1, self.dim)
        X2 = as_locations(X2, self.dim)
        W1 = gaussian_kernel_weights(X1, self.grid, np.broadcast_to(self.kernel, (len(X1),) + self.kernel.shape))
        W2 = gaussian_kernel_weights(X2, self.grid, np.broadcast_to(self.kernel, (len(X2),) + self.kernel.shape))
        lag = X1[:, None, :] - X2[None, :, :]
        dist = np.sqrt(np.sum(lag * lag, axis=-1))
        C = np.zeros(dist.shape)
        for l in range(len(self.grid)):
            local = self.variances[l] * correlation(dist / self.ranges[l], self.family, self.smoothness[l])
            C += np.outer(W1[:, l], W2[:, l]) * local
        return self.cell_volume * C

    def variance_at(self, X, covariates=None):
        return np.diag(self.cross(X, X)).copy()

    def to_dict(self):
        return {
            "type": "fuentes",
            "grid": self.grid.tolist(),
            "kernel": self.kernel.tolist(),
            "variances": self.variances.tolist(),
            "ranges": self.ranges.tolist(),
            "smoothness": self.smoothness.tolist(),
            "family": self.family,
            "cell_volume": self.cell_volume,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["grid"]), np.array(d["kernel"]), np.array(d["variances"]), np.array(d["ranges"]),
            np.array(d.get("smoothness", 0.5)), d.get("family", "exponential"), float(d.get("cell_volume", 1.0)),
        )


def fuentes_cov(spec, s, s2):
    s = np.asarray(s, dtype=float).reshape(1, -1)
    s2 = np.asarray(s2, dtype=float).reshape(1, -1)
    return float(spec.cross(s, s2)[0, 0])


# --------------------------------------------------------------------------
# exact simulation
# --------------------------------------------------------------------------

def jittered_cholesky(C):
    """Lower Cholesky factor with escalating diagonal jitter.

    Tries no jitter, then ``1e-10 * mean(diag)`` growing by 10x up to
    ``1e-6 * mean(diag)``. Returns ``(L, jitter)``.
    """
    C = np.asarray(C, dtype=float)
    scale = float(np.mean(np.diag(C))) if len(C) else 0.0
    jitter = 0.0
    factor = JITTER_START
    while True:
        try:
            A = C if jitter == 0.0 else C + jitter * np.eye(len(C))
            return linalg.cholesky(A, lower=True, check_finite=True), jitter
        except (linalg.LinAlgError, ValueError):
            if factor > JITTER_STOP * (1 + 1e-9) or scale <= 0 or not np.isfinite(scale):
                break
            jitter = factor * scale
            factor *= 10.0
    lam = float(linalg.eigvalsh(C, subset_by_index=[0, 0])[0]) if np.all(np.isfinite(C)) else float("nan")
    raise ConditioningError(
        f"covariance matrix is not positive definite after jitter; smallest eigenvalue {lam:.6g}",
        min_eigenvalue=lam,
    )


def simulate_gp(spec, locs, seed, replicates=1, covariates=None, nugget=0.0):
    """Exact draw ``L z`` from the Gaussian process with covariance ``spec``."""
    from .nonstationary import build_cov_matrix

    X = as_locations(locs)
    C = build_cov_matrix(spec, X, covariates)
    if nugget:
        C = C + nugget * np.eye(len(X))
    Z = _standard_normals(seed, replicates, len(X))
    if len(X) == 0 or np.max(np.abs(np.diag(C))) == 0:
        return FieldRealization(X, np.zeros((replicates, len(X))), seed)
    L, _ = jittered_cholesky(C)
    return FieldRealization(X, Z @ L.T, seed)
