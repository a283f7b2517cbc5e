"""One-step estimators of the least-squares estimands and their IC-based inference.

``Psi = E{cov(A,Y|Z)} / E{var(A|Z)}`` and ``psi = E{cov(A,Y|Z) / var(A|Z)}``.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (
    ALGORITHMS,
    ESTIMANDS,
    Dataset,
    EstimateReport,
    NuisancePredictions,
    make_folds,
    wald_inference,
)
from .nuisance import NuisanceConfig, estimate_nuisances


class DegenerateDesignError(ValueError):
    """All exposure residuals are zero, so the estimand is not identified."""


def _fsum_mean(x: np.ndarray) -> float:
    if not np.all(np.isfinite(x)):
        with np.errstate(invalid="ignore"):
            return float(np.sum(x)) / len(x)
    return math.fsum(x) / len(x)


def _report(estimand, point, ic, algorithm, folds, diagnostics, level=0.95) -> EstimateReport:
    n = len(ic)
    with np.errstate(over="ignore", invalid="ignore"):
        variance = math.fsum(ic * ic) / n**2 if np.all(np.isfinite(ic)) else math.nan
    if math.isfinite(point) and math.isfinite(variance):
        lo, hi, p = wald_inference(point, variance, level)
    else:
        # erratic direct-learner weights can overflow; report rather than hide it
        lo = hi = p = math.nan
    return EstimateReport(
        estimand=estimand,
        point=float(point),
        variance=float(variance),
        ci_lower=float(lo),
        ci_upper=float(hi),
        p_value=float(p),
        ic_values=ic,
        algorithm=algorithm,
        n=n,
        folds=folds,
        diagnostics=diagnostics,
    )


def estimate_Psi(
    data: Dataset,
    nuis: NuisancePredictions,
    algorithm: str = "2",
    folds: int = 1,
) -> EstimateReport:
    """Residual-on-residual ratio estimator of ``Psi`` with plug-in IC variance.

    ``lambda_hat`` and ``beta_hat`` are ignored.
    """
    if nuis.n != data.n:
        raise ValueError("nuisance predictions and dataset differ in length")
    r = data.a - nuis.pi_hat
    s = data.y - nuis.mu_hat
    ssr = math.fsum(r * r)
    if not ssr > 0:
        raise DegenerateDesignError("all exposure residuals a - pi_hat are zero")
    point = math.fsum(r * s) / ssr
    eta = ssr / data.n
    ic = r * (s - point * r) / eta
    diag = {k: v for k, v in nuis.diagnostics.items() if k == "variant"}
    return _report("Psi", point, ic, algorithm, folds, diag)


def estimate_psi(
    data: Dataset,
    nuis: NuisancePredictions,
    algorithm: str = "2B",
    folds: int = 1,
    allow_nonpositive_beta: Optional[bool] = None,
) -> EstimateReport:
    """One-step estimator of ``psi``: the mean of
    ``(a - pi)/beta * (y - mu - lambda*(a - pi)) + lambda``.

    ``beta_hat`` must be positive unless ``allow_nonpositive_beta`` is set;
    by default this is allowed only for direct-learner nuisances, whose
    erratic inverse weights are reported rather than hidden.
    """
    if nuis.n != data.n:
        raise ValueError("nuisance predictions and dataset differ in length")
    for name in ("lambda_hat", "beta_hat"):
        if getattr(nuis, name) is None:
            raise ValueError(f"estimate_psi needs {name}, which is missing from the nuisance predictions")
    lam, beta = nuis.lambda_hat, nuis.beta_hat
    if allow_nonpositive_beta is None:
        allow_nonpositive_beta = nuis.diagnostics.get("variant") == "DirectA"
    diag = {
        k: v
        for k, v in nuis.diagnostics.items()
        if k in ("variant", "n_beta_clipped", "n_beta_nonpositive", "n_inv_beta_nonpositive")
    }
    nonpos = beta <= 0
    if nonpos.any():
        if not allow_nonpositive_beta:
            raise ValueError(f"beta_hat has {int(nonpos.sum())} non-positive values")
        zero = beta == 0
        if zero.any():
            beta = np.where(zero, np.finfo(np.float64).tiny, beta)
            diag["n_beta_clipped"] = int(diag.get("n_beta_clipped", 0)) + int(zero.sum())
    r = data.a - nuis.pi_hat
    with np.errstate(over="ignore", invalid="ignore"):
        terms = r / beta * (data.y - nuis.mu_hat - lam * r) + lam
        point = _fsum_mean(terms)
        ic = terms - point
        # one refinement step absorbs the rounding left by the first pass
        point += _fsum_mean(ic)
        ic = terms - point
    return _report("psi", point, ic, algorithm, folds, diag)


def ic_diagnostics(report: EstimateReport) -> dict:
    """Summary of the IC values: mean, max |phi|, excess kurtosis, clipped-beta count."""
    ic = np.asarray(report.ic_values, dtype=np.float64)
    mean = _fsum_mean(ic) if ic.size else 0.0
    max_abs = float(np.max(np.abs(ic))) if ic.size else 0.0
    m2 = float(np.mean((ic - mean) ** 2)) if ic.size else 0.0
    kurt = float(np.mean((ic - mean) ** 4) / m2**2 - 3.0) if m2 > 0 else 0.0
    return {
        "mean": mean,
        "max_abs": max_abs,
        "kurtosis": kurt,
        "n_beta_clipped": int(report.diagnostics.get("n_beta_clipped", 0)),
        "mean_flag": bool(abs(mean) > 1e-8 * (1.0 + abs(report.point))),
    }


def parse_algorithm(algorithm: str) -> tuple[bool, str]:
    """Map an algorithm label to ``(use_sample_splitting, nuisance_variant)``."""
    algorithm = str(algorithm)
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    split = algorithm.startswith("2")
    variant = {"A": "DirectA", "B": "QuasiOracleB"}.get(algorithm[1:], "PsiOnlyNone")
    return split, variant


def check_estimand_algorithm(estimands, algorithm: str, n_folds: int) -> None:
    split, variant = parse_algorithm(algorithm)
    for e in estimands:
        if e not in ESTIMANDS:
            raise ValueError(f"estimand must be one of {ESTIMANDS}, got {e!r}")
    if "psi" in estimands and variant == "PsiOnlyNone":
        raise ValueError(f"algorithm {algorithm} estimates Psi only; use {algorithm}A or {algorithm}B for psi")
    if split and n_folds < 2:
        raise ValueError(f"algorithm {algorithm} uses sample splitting and needs n_folds >= 2")


class LeastSquaresADE(BaseEstimator):
    """Estimator of the least-squares weighted average derivative effects.

    Parameters
    ----------
    estimand : {"psi", "Psi", "both"}
    algorithm : {"1A", "1B", "2A", "2B", "1", "2"}
        ``1`` = no sample splitting, ``2`` = K-fold cross-fitting; ``A`` =
        direct learner for lambda/beta, ``B`` = quasi-oracle learner. Bare
        ``1``/``2`` only fit pi and mu and support ``Psi`` only.
    n_folds : int
        Number of cross-fitting folds (ignored by algorithm 1).
    learner_pi, learner_mu, learner_aux : regressor, optional
        sklearn-compatible regressors; ``learner_aux`` fits the lambda/beta
        building blocks and must accept ``sample_weight``. Default PolyRidge.
    beta_floor, weight_floor : float, optional
        See :class:`lsade.nuisance.NuisanceConfig`.
    level : float
        Confidence level of the Wald intervals.
    random_state : int
        Seed of the fold assignment.

    Attributes
    ----------
    reports_ : dict of str -> EstimateReport
    nuisances_ : NuisancePredictions
    folds_ : FoldAssignment
    """

    def __init__(
        self,
        estimand: str = "both",
        algorithm: str = "2B",
        n_folds: int = 5,
        learner_pi=None,
        learner_mu=None,
        learner_aux=None,
        beta_floor: Optional[float] = None,
        weight_floor: Optional[float] = None,
        level: float = 0.95,
        random_state: int = 0,
    ):
        self.estimand = estimand
        self.algorithm = algorithm
        self.n_folds = n_folds
        self.learner_pi = learner_pi
        self.learner_mu = learner_mu
        self.learner_aux = learner_aux
        self.beta_floor = beta_floor
        self.weight_floor = weight_floor
        self.level = level
        self.random_state = random_state

    def _estimands(self) -> tuple[str, ...]:
        if self.estimand == "both":
            _, variant = parse_algorithm(self.algorithm)
            return ("Psi",) if variant == "PsiOnlyNone" else ("Psi", "psi")
        return (self.estimand,)

    def fit(self, X, y, a):
        """Fit on covariates ``X``, outcome ``y`` and exposure ``a``."""
        X = check_array(X)
        data = Dataset(y=y, a=a, z=X)
        estimands = self._estimands()
        check_estimand_algorithm(estimands, self.algorithm, self.n_folds)
        split, variant = parse_algorithm(self.algorithm)
        K = self.n_folds if split else 1
        self.folds_ = make_folds(data.n, K, self.random_state)
        config = NuisanceConfig(
            variant=variant,
            learner_pi=self.learner_pi,
            learner_mu=self.learner_mu,
            learner_aux=self.learner_aux,
            beta_floor=self.beta_floor,
            weight_floor=self.weight_floor,
        )
        self.nuisances_ = estimate_nuisances(data, self.folds_, config)
        self.reports_ = {}
        for e in estimands:
            fn = estimate_Psi if e == "Psi" else estimate_psi
            rep = fn(data, self.nuisances_, algorithm=self.algorithm, folds=K)
            if self.level != 0.95:
                rep = _report(e, rep.point, rep.ic_values, rep.algorithm, K, rep.diagnostics, self.level)
            self.reports_[e] = rep
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def Psi_(self) -> float:
        check_is_fitted(self, "reports_")
        return self.reports_["Psi"].point

    @property
    def psi_(self) -> float:
        check_is_fitted(self, "reports_")
        return self.reports_["psi"].point

    def summary(self) -> str:
        check_is_fitted(self, "reports_")
        return "\n".join(r.summary() for r in self.reports_.values())
