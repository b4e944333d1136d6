"""Gaussian-process likelihood, kriging, and maximum-likelihood fitting.

The nugget is kept outside the covariance family and is added only on the
observed-data diagonal. Trends (constant or linear in the coordinates) are
profiled out by generalized least squares.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .convolution import DiscreteConvolutionSpec, FuentesSpec, jittered_cholesky
from .errors import (
    ConditioningError,
    InitializationError,
    InputError,
    InsufficientDataError,
    NSKrigError,
    ShapeError,
)
from .fields import (
    ConstantKernelField,
    ConstantScalarField,
    CovariateKernelField,
    CovariateScalarField,
    KernelMatrix,
    MixtureKernelField,
    as_locations,
    spectral_to_matrix,
)
from .nonstationary import KernelConvolutionSpec, NonstationarySpec, PSSpec, build_cov_matrix
from .stationary import AnisotropyMatrix, StationarySpec

log = logging.getLogger(__name__)

TRENDS = ("zero", "constant", "linear")
MIN_LOCAL_POINTS = 10


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

@dataclass(eq=False)
class SpatialDataset:
    """Locations (n, d), values (R, n) and optional covariates (n, p)."""

    locations: np.ndarray
    values: np.ndarray
    covariates: np.ndarray | None = None
    covariate_names: tuple = ()

    def __post_init__(self):
        self.locations = as_locations(self.locations)
        n = len(self.locations)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != n:
            raise ShapeError(f"values must have shape (replicates, {n}), got {v.shape}")
        if not np.all(np.isfinite(v)):
            r, i = np.argwhere(~np.isfinite(v))[0]
            raise InputError(f"non-finite value at location index {i} (replicate {r})")
        self.values = v
        if self.covariates is not None:
            Z = np.asarray(self.covariates, dtype=float)
            if Z.ndim == 1:
                Z = Z[:, None]
            if Z.shape[0] != n:
                raise ShapeError("one covariate row per location is required")
            self.covariates = Z
        if n > 1 and len(np.unique(self.locations, axis=0)) < n:
            warnings.warn("dataset contains duplicate locations; a positive nugget is required", stacklevel=2)

    @property
    def n(self):
        return len(self.locations)

    @property
    def replicates(self):
        return self.values.shape[0]

    def subset(self, index):
        index = np.asarray(index)
        return SpatialDataset(
            self.locations[index],
            self.values[:, index],
            None if self.covariates is None else self.covariates[index],
            self.covariate_names,
        )

    def diameter(self):
        lo, hi = self.locations.min(axis=0), self.locations.max(axis=0)
        return float(np.linalg.norm(hi - lo))


def trend_design(X, trend):
    if trend == "zero":
        return np.zeros((len(X), 0))
    if trend == "constant":
        return np.ones((len(X), 1))
    if trend == "linear":
        return np.hstack([np.ones((len(X), 1)), X])
    raise InputError(f"unknown trend {trend!r}; expected one of {TRENDS}")


# --------------------------------------------------------------------------
# likelihood
# --------------------------------------------------------------------------

@dataclass
class _Factor:
    chol: np.ndarray
    jitter: float

    @classmethod
    def of(cls, K):
        L, jitter = jittered_cholesky(K)
        return cls(L, jitter)

    def solve(self, B):
        return linalg.cho_solve((self.chol, True), B, check_finite=False)

    def half_solve(self, B):
        return linalg.solve_triangular(self.chol, B, lower=True, check_finite=False)

    @property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def data_covariance(data, spec, nugget, geometry=None):
    C = build_cov_matrix(spec, data.locations, data.covariates, geometry=geometry)
    if nugget:
        C[np.diag_indices_from(C)] += nugget
    return C


def _gls(factor, Xd, Y):
    """GLS coefficients pooled over replicates (rows of Y)."""
    if Xd.shape[1] == 0:
        return np.zeros(0)
    W = factor.half_solve(Xd)
    wy = factor.half_solve(Y.mean(axis=0))
    beta, *_ = linalg.lstsq(W, wy)
    return beta


def _loglik(data, spec, nugget, mean, geometry=None):
    if nugget < 0:
        raise InputError("nugget must be nonnegative")
    factor = _Factor.of(data_covariance(data, spec, nugget, geometry))
    n, R = data.n, data.replicates
    if isinstance(mean, str):
        Xd = trend_design(data.locations, mean)
        beta = _gls(factor, Xd, data.values)
        mu = Xd @ beta
    else:
        beta = None
        mu = np.broadcast_to(np.asarray(mean, dtype=float), (n,))
    Z = factor.half_solve((data.values - mu).T)
    quad = float(np.sum(Z * Z))
    ll = -0.5 * R * (n * np.log(2.0 * np.pi) + factor.logdet) - 0.5 * quad
    return ll, beta, factor


def log_likelihood(data, spec, nugget=0.0, mean="constant", geometry=None):
    """Gaussian log-likelihood summed over independent replicates.

    ``mean`` is a trend name (profiled by GLS) or a fixed scalar / vector.
    """
    return _loglik(data, spec, nugget, mean, geometry)[0]


# --------------------------------------------------------------------------
# spec (de)serialization
# --------------------------------------------------------------------------

_SPEC_TYPES = {
    "stationary": StationarySpec,
    "ns": NonstationarySpec,
    "ps": PSSpec,
    "h": KernelConvolutionSpec,
    "convolution": DiscreteConvolutionSpec,
    "fuentes": FuentesSpec,
}


def spec_from_dict(d):
    try:
        cls = _SPEC_TYPES[d["type"]]
    except KeyError:
        raise InputError(f"unknown covariance type {d.get('type')!r}") from None
    return cls.from_dict(d)


# --------------------------------------------------------------------------
# fitted models and kriging
# --------------------------------------------------------------------------

@dataclass
class ModelFit:
    spec: object
    nugget: float
    trend: str
    beta: np.ndarray
    log_likelihood: float
    convergence: dict = field(default_factory=dict)
    seed: int = 0
    parameters: dict = field(default_factory=dict)
    theta: np.ndarray | None = None

    def to_dict(self):
        return {
            "format": "nskrig-modelfit/1",
            "spec": self.spec.to_dict(),
            "nugget": self.nugget,
            "trend": self.trend,
            "beta": np.asarray(self.beta, dtype=float).tolist(),
            "log_likelihood": self.log_likelihood,
            "convergence": self.convergence,
            "seed": self.seed,
            "parameters": self.parameters,
            "theta": None if self.theta is None else np.asarray(self.theta, dtype=float).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            spec=spec_from_dict(d["spec"]),
            nugget=float(d["nugget"]),
            trend=d["trend"],
            beta=np.array(d["beta"], dtype=float),
            log_likelihood=float(d["log_likelihood"]),
            convergence=d.get("convergence", {}),
            seed=int(d.get("seed", 0)),
            parameters=d.get("parameters", {}),
            theta=None if d.get("theta") is None else np.array(d["theta"], dtype=float),
        )

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class PredictionResult:
    locations: np.ndarray
    mean: np.ndarray
    se: np.ndarray


def krige(fit, data, query, query_covariates=None, replicate=0):
    """Universal kriging predictions and standard errors at ``query``."""
    Xq = as_locations(query, data.locations.shape[1])
    spec = fit.spec
    factor = _Factor.of(data_covariance(data, spec, fit.nugget))
    y = data.values[replicate]
    c = spec.cross(Xq, data.locations, query_covariates, data.covariates)  # (m, n)
    prior_var = spec.variance_at(Xq, query_covariates)
    W = factor.half_solve(c.T)  # L^{-1} c'
    var = prior_var - np.sum(W * W, axis=0)
    Xd = trend_design(data.locations, fit.trend)
    if Xd.shape[1]:
        Xq_d = trend_design(Xq, fit.trend)
        beta = _gls(factor, Xd, y[None, :])
        resid = y - Xd @ beta
        Ld = factor.half_solve(Xd)
        # trend-uncertainty term: r' (X' K^-1 X)^-1 r with r = x_q - X' K^-1 c
        G = Ld.T @ Ld
        Rm = Xq_d - W.T @ Ld
        var = var + np.sum(Rm * linalg.solve(G, Rm.T, assume_a="pos").T, axis=1)
        mean = Xq_d @ beta + c @ factor.solve(resid)
    else:
        mean = c @ factor.solve(y)
    return PredictionResult(Xq, mean, np.sqrt(np.clip(var, 0.0, None)))


# --------------------------------------------------------------------------
# parameter templates
# --------------------------------------------------------------------------

@dataclass
class ParamTemplate:
    """Maps an unconstrained vector ``theta`` to ``(spec, nugget)``.

    ``frozen_kernel`` marks templates whose kernel field does not depend on
    ``theta``; pairwise kernel geometry is then computed once per fit.
    """

    names: list
    initial: np.ndarray
    builder: object
    describe: object
    trend: str = "constant"
    frozen_kernel: bool = False

    def build(self, theta):
        return self.builder(np.asarray(theta, dtype=float))

    def with_initial(self, theta):
        return ParamTemplate(
            self.names, np.array(theta, dtype=float), self.builder, self.describe, self.trend, self.frozen_kernel
        )


def _heuristics(data, diameter=None):
    var = float(np.var(data.values)) or 1.0
    diam = diameter if diameter is not None else data.diameter()
    diam = diam or 1.0
    return var, 0.1 * diam


def stationary_template(
    data,
    family="exponential",
    anisotropic=False,
    smoothness=0.5,
    free_smoothness=False,
    fixed=None,
    init=None,
    trend="constant",
    diameter=None,
):
    """Template for a stationary model.

    Free parameters (log scale unless noted): ``variance``, ``range`` or, when
    anisotropic, ``eig1``, ``eig2`` and ``angle`` (radians, identity scale),
    ``nugget``, and ``smoothness`` when ``free_smoothness``. Entries in
    ``fixed`` are clamped at the given natural values.
    """
    fixed = dict(fixed or {})
    var0, range0 = _heuristics(data, diameter)
    start = {"variance": var0, "range": range0, "nugget": 0.05 * var0, "smoothness": smoothness,
             "eig1": range0**2, "eig2": range0**2, "angle": 0.0}
    start.update(init or {})
    names = ["variance"] + (["eig1", "eig2", "angle"] if anisotropic else ["range"]) + ["nugget"]
    if family == "matern" and free_smoothness:
        names.append("smoothness")
    free = [n for n in names if n not in fixed]
    theta0 = np.array([start[n] if n == "angle" else np.log(start[n]) for n in free], dtype=float)

    def natural(theta):
        vals = dict(fixed)
        for n, t in zip(free, theta):
            vals[n] = float(t) if n == "angle" else float(np.exp(t))
        vals.setdefault("smoothness", smoothness)
        return vals

    def build(theta):
        v = natural(theta)
        if anisotropic:
            A = AnisotropyMatrix(spectral_to_matrix(v["eig1"], v["eig2"], v["angle"]))
            spec = StationarySpec(v["variance"], 1.0, family, v["smoothness"], A)
        else:
            spec = StationarySpec(v["variance"], v["range"], family, v["smoothness"])
        return spec, v["nugget"]

    return ParamTemplate(free, theta0, build, natural, trend)


def nonstationary_template(
    data,
    kernel="constant",
    family="exponential",
    basis_locations=None,
    bandwidth=None,
    smoothness=0.5,
    free_smoothness=False,
    sigma="constant",
    fixed=None,
    init=None,
    trend="constant",
):
    """Template for C^NS models.

    ``kernel`` is a frozen kernel field object, or one of ``"constant"``
    (free eigenvalues and angle), ``"mixture"`` (free basis kernels at
    ``basis_locations``) or ``"covariate"`` (free log-linear coefficients).
    ``sigma`` is ``"constant"`` or ``"covariate"``. Freeing both a
    non-constant sigma and a non-constant kernel makes the two partially
    confounded; the defaults free at most one of them.
    """
    fixed = dict(fixed or {})
    var0, range0 = _heuristics(data)
    p = 0 if data.covariates is None else data.covariates.shape[1]
    start = {"sigma": np.sqrt(var0), "nugget": 0.05 * var0, "smoothness": smoothness}
    start.update(init or {})
    names, theta0 = [], []

    def add(name, value):
        if name not in fixed:
            names.append(name)
            theta0.append(value)

    frozen = not isinstance(kernel, str)
    if kernel == "constant":
        for n in ("eig1", "eig2"):
            add(f"kernel.log_{n}", np.log(start.get(n, range0**2)))
        add("kernel.angle", start.get("angle", 0.0))
    elif kernel == "mixture":
        B = as_locations(basis_locations, data.locations.shape[1])
        for m in range(len(B)):
            add(f"kernel[{m}].log_eig1", np.log(range0**2))
            add(f"kernel[{m}].log_eig2", np.log(range0**2))
            add(f"kernel[{m}].angle", 0.0)
    elif kernel == "covariate":
        for part, v0 in (("log_eig1", np.log(range0**2)), ("log_eig2", np.log(range0**2)), ("angle", 0.0)):
            for j in range(p + 1):
                add(f"kernel.{part}[{j}]", v0 if j == 0 else 0.0)
    elif isinstance(kernel, str):
        raise InputError(f"unknown kernel template {kernel!r}")
    if sigma == "constant":
        add("sigma", np.log(start["sigma"]))
    elif sigma == "covariate":
        for j in range(p + 1):
            add(f"sigma[{j}]", np.log(start["sigma"]) if j == 0 else 0.0)
    else:
        raise InputError(f"unknown sigma template {sigma!r}")
    add("nugget", np.log(start["nugget"]))
    if family == "matern" and free_smoothness:
        add("smoothness", np.log(start["smoothness"]))

    def values(theta):
        v = {k: (np.log(x) if k in ("sigma", "nugget", "smoothness") else x) for k, x in fixed.items()}
        v.update(zip(names, np.asarray(theta, dtype=float)))
        return v

    def build(theta):
        v = values(theta)
        if kernel == "constant":
            K = ConstantKernelField(KernelMatrix(spectral_to_matrix(
                np.exp(v["kernel.log_eig1"]), np.exp(v["kernel.log_eig2"]), v["kernel.angle"])))
        elif kernel == "mixture":
            kernels = tuple(
                KernelMatrix(spectral_to_matrix(np.exp(v[f"kernel[{m}].log_eig1"]),
                                                np.exp(v[f"kernel[{m}].log_eig2"]), v[f"kernel[{m}].angle"]))
                for m in range(len(B))
            )
            K = MixtureKernelField(B, kernels, bandwidth)
        elif kernel == "covariate":
            K = CovariateKernelField(*[np.array([v[f"kernel.{part}[{j}]"] for j in range(p + 1)])
                                       for part in ("log_eig1", "log_eig2", "angle")])
        else:
            K = kernel
        if sigma == "constant":
            S = ConstantScalarField(float(np.exp(v["sigma"])))
        else:
            S = CovariateScalarField(np.array([v[f"sigma[{j}]"] for j in range(p + 1)]))
        kappa = ConstantScalarField(float(np.exp(v["smoothness"])) if "smoothness" in v else smoothness)
        return NonstationarySpec(K, S, kappa, family), float(np.exp(v["nugget"]))

    def describe(theta):
        v = values(theta)
        return {k: (float(np.exp(x)) if k in ("sigma", "nugget", "smoothness") else float(x)) for k, x in v.items()}

    return ParamTemplate(names, np.array(theta0, dtype=float), build, describe, trend, frozen)


# --------------------------------------------------------------------------
# maximum likelihood
# --------------------------------------------------------------------------

@dataclass
class FitOptions:
    restarts: int = 3
    maxiter: int = 4000
    xatol: float = 1e-7
    fatol: float = 1e-9
    seed: int = 0
    restart_scale: float = 0.5
    simplex_step: float = 0.5


def fit_mle(data, template, options=None):
    """Maximize the log-likelihood over ``template``'s free parameters.

    Runs a Nelder-Mead simplex from the template's initial point and from
    ``options.restarts`` jittered copies of it, then polishes the best
    result with one more simplex run. Never returns a point worse than the
    initial one.
    """
    options = options or FitOptions()
    geometry = None
    if template.frozen_kernel:
        spec0, _ = template.build(template.initial)
        geometry = spec0.geometry(data.locations, data.locations, data.covariates, data.covariates)
    evaluations = 0

    def objective(theta):
        nonlocal evaluations
        evaluations += 1
        try:
            spec, nugget = template.build(theta)
            ll = log_likelihood(data, spec, nugget, template.trend, geometry)
        except (NSKrigError, linalg.LinAlgError, FloatingPointError, ValueError):
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    theta0 = np.asarray(template.initial, dtype=float)
    f0 = objective(theta0)
    if not np.isfinite(f0):
        try:
            spec, nugget = template.build(theta0)
            log_likelihood(data, spec, nugget, template.trend, geometry)
            detail = "log-likelihood is not finite"
        except Exception as exc:  # diagnostics only
            detail = f"{type(exc).__name__}: {exc}"
        raise InitializationError(
            f"log-likelihood not finite at the initial point {dict(zip(template.names, theta0.tolist()))}: {detail}"
        )

    k = len(theta0)
    if k == 0:
        best_x, best_f, runs, iterations, success = theta0, f0, [], 0, True
    else:
        rng = np.random.default_rng(options.seed)
        starts = [theta0] + [theta0 + options.restart_scale * rng.standard_normal(k) for _ in range(options.restarts)]

        def run(x0):
            simplex = np.vstack([x0, x0 + options.simplex_step * np.eye(k)])
            return optimize.minimize(
                objective, x0, method="Nelder-Mead",
                options={"maxiter": options.maxiter * k, "maxfev": options.maxiter * k * 2,
                         "xatol": options.xatol, "fatol": options.fatol,
                         "initial_simplex": simplex, "adaptive": k > 4},
            )

        results = [run(x) for x in starts]
        best = min(results, key=lambda r: r.fun)
        polish = run(best.x)
        results.append(polish)
        best = min(results, key=lambda r: r.fun)
        runs = [float(-r.fun) for r in results]
        iterations = int(sum(r.nit for r in results))
        success = bool(polish.success)
        best_x, best_f = (best.x, best.fun) if best.fun <= f0 else (theta0, f0)

    spec, nugget = template.build(best_x)
    ll, beta, factor = _loglik(data, spec, nugget, template.trend, geometry)
    report = {
        "converged": success,
        "iterations": iterations,
        "evaluations": evaluations,
        "restarts": options.restarts,
        "run_log_likelihoods": runs,
        "initial_log_likelihood": float(-f0),
        "jitter": factor.jitter,
    }
    log.info("fit finished: loglik=%.6f converged=%s iterations=%d", ll, success, iterations)
    return ModelFit(
        spec=spec, nugget=nugget, trend=template.trend,
        beta=np.zeros(0) if beta is None else beta, log_likelihood=float(ll),
        convergence=report, seed=options.seed,
        parameters={k_: float(v) for k_, v in template.describe(best_x).items()},
        theta=np.asarray(best_x, dtype=float),
    )


# --------------------------------------------------------------------------
# local kernel estimation and the two-stage fit
# --------------------------------------------------------------------------

def basis_grid(X, M):
    """``M`` evenly spaced basis centroids over the bounding box of ``X`` (d = 2).

    Uses the factorization ``M = mx * my`` whose cell aspect best matches the
    box, placing centroids at cell centres.
    """
    X = as_locations(X, 2)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    best = None
    for mx in range(1, M + 1):
        if M % mx:
            continue
        my = M // mx
        score = abs(np.log((span[0] / mx) / (span[1] / my)))
        if best is None or score < best[0]:
            best = (score, mx, my)
    _, mx, my = best
    xs = lo[0] + span[0] * (np.arange(mx) + 0.5) / mx
    ys = lo[1] + span[1] * (np.arange(my) + 0.5) / my
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def estimate_local_kernels(data, basis_locs, radius, options=None, return_fits=False):
    """Locally fit ``sigma2 exp(-h' A^{-1} h) + nugget`` around each basis point.

    Each neighbourhood (points within ``radius``) is fit by maximum likelihood
    and its anisotropy matrix ``A`` is returned as the basis kernel matrix.
    With constant kernel ``A``, C^NS with the Gaussian correlation reproduces
    ``exp(-h' A^{-1} h)`` exactly, so no further transformation is needed.
    """
    options = options or FitOptions()
    B = as_locations(basis_locs, data.locations.shape[1])
    diam = data.diameter()
    kernels, fits = [], []
    for m, b in enumerate(B):
        idx = np.flatnonzero(np.linalg.norm(data.locations - b, axis=1) <= radius)
        if len(idx) < MIN_LOCAL_POINTS:
            raise InsufficientDataError(
                f"basis index {m} has {len(idx)} observations within radius {radius}; "
                f"at least {MIN_LOCAL_POINTS} are required"
            )
        local = data.subset(idx)
        template = stationary_template(local, "gaussian", anisotropic=True, diameter=diam)
        fit = fit_mle(local, template, options)
        kernels.append(KernelMatrix(fit.spec.anisotropy.matrix))
        fits.append(fit)
        log.info("basis %d: %d points, kernel %s", m, len(idx), kernels[-1])
    return (kernels, fits) if return_fits else kernels


def fit_two_stage(
    data,
    basis_locs,
    radius,
    options=None,
    family="gaussian",
    bandwidth=None,
    smoothness=0.5,
    free_smoothness=False,
    trend="constant",
):
    """Local kernel estimation followed by a global fit with the kernels frozen.

    Stage 2 frees the constant standard deviation, the nugget and (for a
    Matérn family with ``free_smoothness``) the smoothness; the trend is
    profiled.
    """
    options = options or FitOptions()
    B = as_locations(basis_locs, data.locations.shape[1])
    kernels, local_fits = estimate_local_kernels(data, B, radius, options, return_fits=True)
    field_ = MixtureKernelField(B, tuple(kernels), bandwidth)
    template = nonstationary_template(
        data, kernel=field_, family=family, smoothness=smoothness, free_smoothness=free_smoothness, trend=trend
    )
    fit = fit_mle(data, template, options)
    fit.convergence["stage1"] = [
        {"basis_index": m, "log_likelihood": f.log_likelihood, "converged": f.convergence["converged"],
         "parameters": f.parameters}
        for m, f in enumerate(local_fits)
    ]
    fit.convergence["radius"] = float(radius)
    return fit
