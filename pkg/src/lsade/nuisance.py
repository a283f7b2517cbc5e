"""Cross-fitted nuisance estimation.

``pi(z) = E(A|Z=z)`` and ``mu(z) = E(Y|Z=z)`` are ordinary regressions.
``lambda(z) = cov(A,Y|Z=z)/var(A|Z=z)`` and ``beta(z) = var(A|Z=z)`` are
learned either directly from conditional moments (variant ``DirectA``) or by
residual-weighted pseudo-outcome regressions (variant ``QuasiOracleB``).
With ``K == 1`` every model is fitted on all rows and evaluated in-sample;
with ``K > 1`` each row gets predictions from models that never saw it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from sklearn.base import clone

from .core import Dataset, FoldAssignment, NuisancePredictions
from .regression import PolyRidge

VARIANTS = ("DirectA", "QuasiOracleB", "PsiOnlyNone")

BETA_LOWER_REL = 1e-4
BETA_UPPER_REL = 1e4
WEIGHT_FLOOR_REL = 1e-12


class NuisanceFitError(RuntimeError):
    """A learner failed while fitting one cross-fitting fold."""

    def __init__(self, fold: int, target: str, cause: Exception):
        super().__init__(f"fold {fold}: fitting {target} failed: {cause}")
        self.fold = fold
        self.target = target


@dataclass
class NuisanceConfig:
    """Which variant to run and which learners to use.

    ``beta_floor=None`` picks the variant default: no floor for ``DirectA``
    and ``1e-4 * var(A)`` for ``QuasiOracleB``. ``weight_floor=None`` means
    ``1e-12 * var(A)``. ``QuasiOracleB`` additionally caps beta at
    ``1e4 * var(A)``. Each var(A) is taken over the training rows of the fold.
    """

    variant: str = "QuasiOracleB"
    learner_pi: Any = None
    learner_mu: Any = None
    learner_aux: Any = None
    beta_floor: Optional[float] = None
    weight_floor: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("beta_floor", "weight_floor"):
            val = getattr(self, name)
            if val is not None and not val >= 0:
                raise ValueError(f"{name} must be >= 0")

    def _learner(self, which: str):
        est = getattr(self, f"learner_{which}")
        if est is None and which == "aux":
            est = self.learner_pi
        return clone(est) if est is not None else PolyRidge()

    def resolved_beta_floor(self, var_a: float) -> float:
        if self.beta_floor is not None:
            return float(self.beta_floor)
        return BETA_LOWER_REL * var_a if self.variant == "QuasiOracleB" else 0.0

    def resolved_weight_floor(self, var_a: float) -> float:
        if self.weight_floor is not None:
            return float(self.weight_floor)
        return WEIGHT_FLOOR_REL * var_a


def _fit_predict(learner, x_train, v_train, x_test, fold, target, weights=None):
    try:
        if weights is None:
            model = learner.fit(x_train, v_train)
        else:
            model = learner.fit(x_train, v_train, sample_weight=weights)
        pred = np.asarray(model.predict(x_test), dtype=np.float64)
    except Exception as exc:  # noqa: BLE001 - re-raised with fold context
        raise NuisanceFitError(fold, target, exc) from exc
    if not np.all(np.isfinite(pred)):
        raise NuisanceFitError(fold, target, ValueError("non-finite predictions"))
    return model, pred


def _fold_ids(folds: FoldAssignment) -> range:
    return range(folds.K)


def fit_pi_mu(
    data: Dataset,
    folds: FoldAssignment,
    config: NuisanceConfig,
    return_models: bool = False,
):
    """Out-of-fold ``pi_hat`` and ``mu_hat`` (in-sample when ``K == 1``).

    With ``return_models=True`` also returns the per-fold fitted ``(pi, mu)``
    models, which the quasi-oracle step reuses for its pseudo-outcomes.
    """
    if folds.n != data.n:
        raise ValueError("fold assignment and dataset differ in length")
    pi_hat = np.empty(data.n)
    mu_hat = np.empty(data.n)
    models = {}
    for k in _fold_ids(folds):
        train, test = folds.split(k)
        m_pi, pi_hat[test] = _fit_predict(
            config._learner("pi"), data.z[train], data.a[train], data.z[test], k, "pi"
        )
        m_mu, mu_hat[test] = _fit_predict(
            config._learner("mu"), data.z[train], data.y[train], data.z[test], k, "mu"
        )
        models[k] = (m_pi, m_mu)
    nuis = NuisancePredictions(pi_hat, mu_hat, diagnostics={"variant": config.variant})
    return (nuis, models) if return_models else nuis


def fit_lambda_beta_direct(
    data: Dataset,
    folds: FoldAssignment,
    pi_mu: NuisancePredictions,
    config: NuisanceConfig,
) -> NuisancePredictions:
    """Direct learner: ``beta = E(A^2|Z) - pi^2`` and
    ``lambda = (E(YA|Z) - mu*pi) / beta``, each conditional moment from its
    own regression on out-of-fold rows.

    Nothing keeps ``beta_hat`` positive unless ``beta_floor`` is set. A value
    of exactly zero is replaced by the smallest positive double and counted
    in ``diagnostics["n_beta_guarded"]``.
    """
    pi, mu = pi_mu.pi_hat, pi_mu.mu_hat
    e_ya = np.empty(data.n)
    e_a2 = np.empty(data.n)
    floor = np.empty(data.n)
    ya = data.y * data.a
    a2 = data.a * data.a
    for k in _fold_ids(folds):
        train, test = folds.split(k)
        # scales come from the training rows only, keeping fold k untouched by its own data
        floor[test] = config.resolved_beta_floor(float(np.var(data.a[train])))
        _, e_ya[test] = _fit_predict(config._learner("aux"), data.z[train], ya[train], data.z[test], k, "E[YA|Z]")
        _, e_a2[test] = _fit_predict(config._learner("aux"), data.z[train], a2[train], data.z[test], k, "E[A^2|Z]")

    beta = e_a2 - pi * pi
    n_nonpos = int(np.sum(beta <= 0))
    low = (floor > 0) & (beta < floor)
    n_floored = int(low.sum())
    beta = np.where(low, floor, beta)
    zero = beta == 0.0
    n_guarded = int(zero.sum())
    beta = np.where(zero, np.finfo(np.float64).tiny, beta)
    with np.errstate(over="ignore"):
        lam = (e_ya - mu * pi) / beta
    # a guarded beta can push the ratio past the float range; keep it finite
    big = np.finfo(np.float64).max
    lam = np.clip(lam, -big, big)

    diag = dict(pi_mu.diagnostics)
    diag.update(
        variant="DirectA",
        beta_floor=float(floor.max()),
        n_beta_nonpositive=n_nonpos,
        n_beta_floored=n_floored,
        n_beta_guarded=n_guarded,
        n_beta_clipped=n_floored + n_guarded,
    )
    return NuisancePredictions(pi, mu, lam, beta, diagnostics=diag)


def fit_lambda_beta_quasioracle(
    data: Dataset,
    folds: FoldAssignment,
    pi_mu: NuisancePredictions,
    config: NuisanceConfig,
    models: Optional[dict] = None,
) -> NuisancePredictions:
    """Quasi-oracle (R-learner style) estimation of ``lambda`` and ``1/beta``.

    On the rows outside fold k, with residuals ``r = a - pi_k(z)`` and
    ``s = y - mu_k(z)`` from the models trained on those same rows:

    * ``lambda`` is the regression of ``s/r`` on z with weights ``r**2``;
    * ``1/beta`` is the regression of ``r**-2`` on z with weights ``r**2``.

    Weights are floored at ``weight_floor`` and the pseudo-outcomes are formed
    as ``s*r/w`` and ``1/w`` so that ``w * pseudo`` is always finite. The
    predicted ``1/beta`` is clipped so that beta stays inside
    ``[beta_floor, 1e4 * var(A)]``.
    """
    lam = np.empty(data.n)
    inv_beta = np.empty(data.n)
    lower = np.empty(data.n)
    upper = np.empty(data.n)
    n_w_floored = 0
    for k in _fold_ids(folds):
        train, test = folds.split(k)
        zt = data.z[train]
        # scales come from the training rows only, keeping fold k untouched by its own data
        var_a = float(np.var(data.a[train]))
        w_floor = config.resolved_weight_floor(var_a)
        lo = config.resolved_beta_floor(var_a)
        lower[test] = lo if lo > 0 else BETA_LOWER_REL * var_a
        upper[test] = BETA_UPPER_REL * var_a
        if models is not None and k in models:
            m_pi, m_mu = models[k]
            try:
                r = data.a[train] - m_pi.predict(zt)
                s = data.y[train] - m_mu.predict(zt)
            except Exception as exc:  # noqa: BLE001
                raise NuisanceFitError(k, "pseudo-outcomes", exc) from exc
        else:
            _, pi_t = _fit_predict(config._learner("pi"), zt, data.a[train], zt, k, "pi")
            _, mu_t = _fit_predict(config._learner("mu"), zt, data.y[train], zt, k, "mu")
            r = data.a[train] - pi_t
            s = data.y[train] - mu_t
        r2 = r * r
        w = np.maximum(r2, w_floor)
        n_w_floored += int(np.sum(r2 < w_floor))
        if not w.sum() > 0:
            raise NuisanceFitError(k, "lambda", ValueError("all exposure residuals are zero"))
        _, lam[test] = _fit_predict(config._learner("aux"), zt, s * r / w, data.z[test], k, "lambda", w)
        _, inv_beta[test] = _fit_predict(config._learner("aux"), zt, 1.0 / w, data.z[test], k, "1/beta", w)

    n_nonpos = int(np.sum(inv_beta <= 0))
    clipped = (inv_beta < 1.0 / upper) | (inv_beta > 1.0 / lower)
    beta = 1.0 / np.clip(inv_beta, 1.0 / upper, 1.0 / lower)

    diag = dict(pi_mu.diagnostics)
    diag.update(
        variant="QuasiOracleB",
        beta_floor=float(lower.max()),
        beta_cap=float(upper.max()),
        n_weight_floored=n_w_floored,
        n_inv_beta_nonpositive=n_nonpos,
        n_beta_clipped=int(clipped.sum()),
    )
    return NuisancePredictions(pi_mu.pi_hat, pi_mu.mu_hat, lam, beta, diagnostics=diag)


def estimate_nuisances(
    data: Dataset, folds: FoldAssignment, config: NuisanceConfig
) -> NuisancePredictions:
    """Run the full nuisance pipeline for ``config.variant``."""
    pi_mu, models = fit_pi_mu(data, folds, config, return_models=True)
    if config.variant == "PsiOnlyNone":
        return pi_mu
    if config.variant == "DirectA":
        return fit_lambda_beta_direct(data, folds, pi_mu, config)
    return fit_lambda_beta_quasioracle(data, folds, pi_mu, config, models)
