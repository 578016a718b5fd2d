"""Fast approximate solution of Stein equations from MCMC output.

Collocation at distinct MCMC states turns the Stein equation into the linear
system K_p w = 1; this package solves it matrix-free with (preconditioned)
conjugate gradient and turns the weights into posterior expectation estimates.
"""

from .estimator import Estimate, Integrand, UndefinedEstimateError, estimate_with_bound, parse_integrand, point_estimate
from .kernels import DenseAction, IMQProfile, KernelAction, SteinKernel, assemble_dense
from .precond import FAMILIES, build_preconditioner
from .samples import (
    GaussianTarget,
    LogisticRegressionTarget,
    SampleSet,
    distinct_prefix,
    generate_logistic_data,
    load_samples,
    rwmh_sample,
    save_samples,
)
from .solver import SolveConfig, SolveTrace, cg, dense_solve, pcg, worst_case_error

__version__ = "0.1.0"
