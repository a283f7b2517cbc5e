"""Efficient estimation of least-squares weighted average derivative effects.

``psi = E{cov(A,Y|Z) / var(A|Z)}`` and ``Psi = E{cov(A,Y|Z)} / E{var(A|Z)}``
summarise the effect of a continuous exposure ``A`` on an outcome ``Y``
adjusting for covariates ``Z``.
"""

__version__ = "0.1.0"

from .core import (
    Dataset,
    EstimateReport,
    FoldAssignment,
    NuisancePredictions,
    make_folds,
    wald_inference,
)
from .estimators import LeastSquaresADE, estimate_psi, estimate_Psi, ic_diagnostics
from .nuisance import (
    NuisanceConfig,
    estimate_nuisances,
    fit_lambda_beta_direct,
    fit_lambda_beta_quasioracle,
    fit_pi_mu,
)
from .regression import KernelSmoother, LearnerSpec, OracleRegressor, PolyRidge
from .weights import (
    ExposureFamily,
    QuadratureConfig,
    check_normalization,
    ls_contrast,
    weight_closed_form,
    weight_numeric,
    weight_unnormalized,
)

__all__ = [
    "Dataset",
    "EstimateReport",
    "ExposureFamily",
    "FoldAssignment",
    "KernelSmoother",
    "LearnerSpec",
    "LeastSquaresADE",
    "NuisanceConfig",
    "NuisancePredictions",
    "OracleRegressor",
    "PolyRidge",
    "QuadratureConfig",
    "check_normalization",
    "estimate_Psi",
    "estimate_nuisances",
    "estimate_psi",
    "fit_lambda_beta_direct",
    "fit_lambda_beta_quasioracle",
    "fit_pi_mu",
    "ic_diagnostics",
    "ls_contrast",
    "make_folds",
    "wald_inference",
    "weight_closed_form",
    "weight_numeric",
    "weight_unnormalized",
]
