"""Nonstationary spatial Gaussian processes: covariance construction,
process-convolution simulation, likelihood fitting and kriging."""

from .basis import EOFBasis, EmpiricalCovariance, KLSpec, empirical_cov, eof_decompose, kl_truncated_cov
from .convolution import (
    ConvolutionGrid,
    DiscreteConvolutionSpec,
    FieldRealization,
    FuentesSpec,
    discrete_convolution_cov,
    fuentes_cov,
    simulate_discrete_convolution,
    simulate_gp,
)
from .engine import (
    FitOptions,
    ModelFit,
    PredictionResult,
    SpatialDataset,
    basis_grid,
    estimate_local_kernels,
    fit_mle,
    fit_two_stage,
    krige,
    log_likelihood,
    nonstationary_template,
    stationary_template,
)
from .fields import (
    ConstantKernelField,
    ConstantScalarField,
    CovariateKernelField,
    CovariateScalarField,
    KernelMatrix,
    MixtureKernelField,
    MixtureScalarField,
    eval_kernel_field,
)
from .nonstationary import KernelConvolutionSpec, NonstationarySpec, PSSpec, build_cov_matrix, cov_H, cov_NS, cov_PS, q_distance
from .stationary import (
    AnisotropyMatrix,
    IsotropicParams,
    StationarySpec,
    aniso_distance,
    exponential,
    gaussian_corr,
    matern,
    nnd_check,
)

__version__ = "0.1.0"
