"""Stochastic Galerkin and Monte Carlo moments of PDE quantities of interest,
with Gram-Charlier / Edgeworth density estimates."""
from ._backend import DEFAULT as KERNEL_BACKEND
from .errors import (
    CoercivityError,
    ConfigurationError,
    DegenerateDistributionError,
    DimensionError,
    NumericalError,
    SGPDFError,
    SolverError,
    UnsupportedQoIError,
)
from .fem import build_mesh, solve_poisson
from .kl import CovarianceSpec, KLField, build_kl_field
from .mc import SampleSet, mc_moments, run_mc, sample_parameters
from .series import (
    CumulantVector,
    MomentVector,
    TruncatedSeries,
    build_series,
    moments_to_cumulants,
    standardize_moments,
)
from .sg import exact_moments, qoi_polynomial, run_sg

__version__ = "0.1.0"
