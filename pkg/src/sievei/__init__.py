"""Penalized sieve minimum distance estimation and inference for NPIV / NPQIV models."""

from .basis import BasisSpec, eval_basis, parse_basis, penalty_gram
from .bootstrap import (
    BootstrapRun,
    WeightScheme,
    bootstrap_ci,
    bootstrap_criterion,
    bootstrap_score,
    bootstrap_sqlr,
    bootstrap_wald,
    gen_weights,
)
from .data_io import Dataset, load_dataset, read_table, write_table
from .dgp import DGPSpec, gen_dgp
from .estimator import PSMDRegressor
from .functionals import Functional, WeightFn, gradient, parse_functional, value
from .inference import InferenceReport, invert_sqlr_ci, score_test, sqlr_test, wald_test
from .linalg import build_projection, pinv, projection_quadform
from .models import ModelSpec, criterion, dmhat_matrix, m_hat, residuals, sigma0_series
from .psmd import FitResult, OptimConfig, RestrictedFitError, fit, fit_restricted
from .variance import (
    RieszSolution,
    d_matrix,
    omega_matrix,
    riesz,
    slope_variance,
    upsilon_matrix,
    variance_plugin,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "BootstrapRun",
    "DGPSpec",
    "Dataset",
    "FitResult",
    "Functional",
    "InferenceReport",
    "ModelSpec",
    "OptimConfig",
    "PSMDRegressor",
    "RestrictedFitError",
    "RieszSolution",
    "WeightFn",
    "WeightScheme",
    "bootstrap_ci",
    "bootstrap_criterion",
    "bootstrap_score",
    "bootstrap_sqlr",
    "bootstrap_wald",
    "build_projection",
    "criterion",
    "d_matrix",
    "dmhat_matrix",
    "eval_basis",
    "fit",
    "fit_restricted",
    "gen_dgp",
    "gen_weights",
    "gradient",
    "invert_sqlr_ci",
    "load_dataset",
    "m_hat",
    "omega_matrix",
    "parse_basis",
    "parse_functional",
    "penalty_gram",
    "pinv",
    "projection_quadform",
    "read_table",
    "residuals",
    "riesz",
    "score_test",
    "sigma0_series",
    "slope_variance",
    "sqlr_test",
    "upsilon_matrix",
    "value",
    "variance_plugin",
    "wald_test",
    "write_table",
]
