"""Exact KL divergence to the log-uniform prior and variational Gaussian dropout."""

from vdkl.errors import (
    ConvergenceError,
    DomainError,
    InsufficientGridError,
    QuadratureError,
    StateError,
    TrainingDivergedError,
)
from vdkl.specfun import AccuracySpec, dawson, digamma, expint_ei
from vdkl.kl import (
    AdditiveParams,
    KlEvaluation,
    MeanVarParams,
    MultiplicativeParams,
    SeriesConfig,
    kl_additive,
    kl_grad_mean_var,
    kl_grad_u,
    kl_mc_oracle,
    kl_multiplicative,
    kl_series_oracle,
    kl_value,
    logchisq_mean,
    reduced_u,
    verify_appendix_identities,
)

__version__ = "0.1.0"
