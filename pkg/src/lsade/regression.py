"""Weighted regression learners used for every conditional-mean fit.

All learners follow the scikit-learn regressor contract,
``fit(X, y, sample_weight=None)`` / ``predict(X)``, so any sklearn regressor
that accepts ``sample_weight`` can be dropped into the nuisance pipeline in
their place.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import make_folds

DEFAULT_PENALTY_GRID = tuple(float(v) for v in np.logspace(-6, 2, 13))


def _check_weights(sample_weight, n: int) -> np.ndarray:
    if sample_weight is None:
        return np.ones(n)
    w = np.asarray(sample_weight, dtype=np.float64).ravel()
    if w.shape != (n,):
        raise ValueError(f"sample_weight has length {w.size}, expected {n}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample_weight must be finite and non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("sample_weight sums to zero")
    # mean one over the rows that carry weight, so zero-weight rows are inert
    return w / (total / np.count_nonzero(w))


def _weighted_center_scale(X: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sw = w.sum()
    mean = w @ X / sw
    var = w @ (X - mean) ** 2 / sw
    scale = np.sqrt(var)
    scale[~(scale > 1e-12 * (1.0 + np.abs(mean)))] = 1.0
    return mean, scale


def poly_exponents(p: int, degree: int, interaction_order: int) -> list[tuple[int, ...]]:
    """Exponent vectors of all non-constant monomials of total degree <= ``degree``
    involving at most ``interaction_order`` distinct variables."""
    out = []
    for total in range(1, degree + 1):
        for k in range(1, min(interaction_order, p, total) + 1):
            for vars_ in itertools.combinations(range(p), k):
                # compositions of `total` into k positive parts
                for cuts in itertools.combinations(range(1, total), k - 1):
                    parts = np.diff((0, *cuts, total))
                    e = [0] * p
                    for v, d in zip(vars_, parts):
                        e[v] = int(d)
                    out.append(tuple(e))
    return out


def _expand(Xs: np.ndarray, exponents: list[tuple[int, ...]]) -> np.ndarray:
    max_deg = max((max(e) for e in exponents), default=1)
    powers = [np.ones_like(Xs)]
    for _ in range(max_deg):
        powers.append(powers[-1] * Xs)
    B = np.empty((Xs.shape[0], len(exponents)))
    for j, e in enumerate(exponents):
        col = np.ones(Xs.shape[0])
        for v, d in enumerate(e):
            if d:
                col = col * powers[d][:, v]
        B[:, j] = col
    return B


class _RidgePath:
    """Weighted ridge solutions for many penalties from one eigendecomposition.

    The intercept is left unpenalized by centering on the weighted means.
    """

    def __init__(self, B: np.ndarray, v: np.ndarray, w: np.ndarray):
        sw = w.sum()
        self.b_mean = w @ B / sw
        self.v_mean = w @ v / sw
        Bc = B - self.b_mean
        G = Bc.T @ (Bc * w[:, None])
        # w * v is formed first so that w * v stays finite whenever the caller
        # passes pseudo-outcomes built as (numerator / w)
        c = Bc.T @ (w * v - w * self.v_mean)
        self.evals, self.evecs = np.linalg.eigh(G)
        self.evals = np.clip(self.evals, 0.0, None)
        self.proj = self.evecs.T @ c

    def coef(self, penalty: float) -> np.ndarray:
        return self.evecs @ (self.proj / (self.evals + penalty))

    def predict(self, B: np.ndarray, coef: np.ndarray) -> np.ndarray:
        return self.v_mean + (B - self.b_mean) @ coef


class PolyRidge(RegressorMixin, BaseEstimator):
    """Ridge regression on a standardized polynomial basis with weighted CV.

    Minimizes ``sum_i w_i (v_i - g(x_i))**2 + penalty * ||coef||**2`` with the
    positive weights rescaled to mean one, so multiplying every weight by a
    constant does not change the fit and zero-weight rows have no effect. The intercept is not penalized. The penalty is
    picked from ``penalty_grid`` by ``cv_folds``-fold weighted cross-validation;
    near-ties go to the larger penalty.

    Parameters
    ----------
    degree : int
        Maximum total degree of the monomials.
    interaction_order : int
        Maximum number of distinct covariates in a monomial (1 = additive).
    penalty_grid : sequence of float, optional
        Candidate penalties; defaults to 13 log-spaced values in [1e-6, 1e2].
    cv_folds : int
        Number of CV folds used to pick the penalty.
    random_state : int
        Seed for the CV fold assignment.
    """

    def __init__(
        self,
        degree: int = 3,
        interaction_order: int = 2,
        penalty_grid: Optional[Sequence[float]] = None,
        cv_folds: int = 5,
        random_state: int = 0,
    ):
        self.degree = degree
        self.interaction_order = interaction_order
        self.penalty_grid = penalty_grid
        self.cv_folds = cv_folds
        self.random_state = random_state

    def _grid(self) -> np.ndarray:
        grid = DEFAULT_PENALTY_GRID if self.penalty_grid is None else self.penalty_grid
        grid = np.sort(np.asarray(grid, dtype=np.float64))
        if grid.size == 0 or np.any(grid <= 0) or not np.all(np.isfinite(grid)):
            raise ValueError("penalty_grid must be non-empty, finite and strictly positive")
        return grid

    def _basis(self, X: np.ndarray) -> np.ndarray:
        Xs = (X - self.x_mean_) / self.x_scale_
        B = _expand(Xs, self.exponents_)
        return (B - self.basis_mean_) / self.basis_scale_

    def fit(self, X, y, sample_weight=None):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.interaction_order not in (1, 2):
            raise ValueError("interaction_order must be 1 or 2")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        X, y = check_X_y(X, y, y_numeric=True, ensure_min_samples=2)
        y = y.astype(np.float64)
        n, p = X.shape
        w = _check_weights(sample_weight, n)
        grid = self._grid()

        self.n_features_in_ = p
        self.exponents_ = poly_exponents(p, self.degree, self.interaction_order)
        self.x_mean_, self.x_scale_ = _weighted_center_scale(X, w)
        raw = _expand((X - self.x_mean_) / self.x_scale_, self.exponents_)
        self.basis_mean_, self.basis_scale_ = _weighted_center_scale(raw, w)
        B = (raw - self.basis_mean_) / self.basis_scale_

        if grid.size == 1:
            self.cv_loss_ = np.zeros(1)
            penalty = grid[0]
        else:
            self.cv_loss_ = self._cv_losses(B, y, w, grid)
            penalty = self._select(grid, self.cv_loss_)

        path = _RidgePath(B, y, w)
        coef = path.coef(penalty)
        while not np.all(np.isfinite(coef)):
            # ill-conditioned basis: escalate instead of failing
            penalty *= 10.0
            coef = path.coef(penalty)
        self.penalty_ = float(penalty)
        self.coef_ = coef
        self.intercept_ = float(path.v_mean - path.b_mean @ coef)
        return self

    def _cv_losses(self, B, y, w, grid) -> np.ndarray:
        n = len(y)
        K = min(self.cv_folds, n)
        folds = make_folds(n, K, self.random_state)
        losses = np.zeros(grid.size)
        wy = w * y
        for k in range(K):
            train, test = folds.split(k)
            if not w[train].sum() > 0 or not w[test].sum() > 0:
                continue
            path = _RidgePath(B[train], y[train], w[train])
            for j, pen in enumerate(grid):
                g = path.predict(B[test], path.coef(pen))
                # weighted squared error minus the g-free term sum(w*y**2),
                # which can be huge for inverse-weight pseudo-outcomes
                losses[j] += np.sum(w[test] * g * g - 2.0 * wy[test] * g)
        return losses

    @staticmethod
    def _select(grid, losses) -> float:
        best = losses.min()
        spread = np.ptp(losses)
        tol = 1e-9 * max(abs(best), spread, np.finfo(float).tiny)
        ok = np.flatnonzero(losses <= best + tol)
        return float(grid[ok.max()])

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but PolyRidge was fitted with {self.n_features_in_}"
            )
        return self.intercept_ + self._basis(X) @ self.coef_


class KernelSmoother(RegressorMixin, BaseEstimator):
    """Weighted Nadaraya-Watson regression with a Gaussian product kernel.

    Covariates are standardized with the training weights. When ``bandwidth``
    is None the rule-of-thumb ``1.06 * n_eff ** (-1 / (4 + p))`` is used on
    the standardized scale, with ``n_eff`` the Kish effective sample size.
    """

    def __init__(self, bandwidth: Optional[float] = None, chunk_size: int = 2048):
        self.bandwidth = bandwidth
        self.chunk_size = chunk_size

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, y_numeric=True, ensure_min_samples=2)
        n, p = X.shape
        w = _check_weights(sample_weight, n)
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        keep = w > 0
        self.n_features_in_ = p
        self.x_mean_, self.x_scale_ = _weighted_center_scale(X, w)
        self.x_train_ = ((X - self.x_mean_) / self.x_scale_)[keep]
        self.y_train_ = y.astype(np.float64)[keep]
        self.w_train_ = w[keep]
        if self.bandwidth is None:
            n_eff = w.sum() ** 2 / np.sum(w * w)
            self.bandwidth_ = 1.06 * n_eff ** (-1.0 / (4 + p))
        else:
            self.bandwidth_ = float(self.bandwidth)
        return self

    def predict(self, X):
        check_is_fitted(self, "x_train_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but KernelSmoother was fitted with {self.n_features_in_}"
            )
        Xs = (X - self.x_mean_) / self.x_scale_
        out = np.empty(Xs.shape[0])
        logw = np.log(self.w_train_)
        h2 = 2.0 * self.bandwidth_**2
        for start in range(0, Xs.shape[0], self.chunk_size):
            chunk = Xs[start : start + self.chunk_size]
            d2 = (
                np.sum(chunk**2, axis=1)[:, None]
                - 2.0 * chunk @ self.x_train_.T
                + np.sum(self.x_train_**2, axis=1)[None, :]
            )
            logk = logw[None, :] - np.clip(d2, 0.0, None) / h2
            logk -= logk.max(axis=1, keepdims=True)
            k = np.exp(logk)
            out[start : start + len(chunk)] = (k @ self.y_train_) / k.sum(axis=1)
        return out


class OracleRegressor(RegressorMixin, BaseEstimator):
    """Wraps a known function ``func(X) -> values``; ``fit`` ignores the data."""

    def __init__(self, func: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        self.func = func

    def fit(self, X, y=None, sample_weight=None):
        if self.func is None:
            raise ValueError("OracleRegressor needs a function")
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but OracleRegressor was fitted with {self.n_features_in_}"
            )
        return np.asarray(self.func(X), dtype=np.float64).reshape(X.shape[0])


@dataclass
class LearnerSpec:
    """Serializable learner choice, as read from a CLI config file."""

    kind: str = "PolyRidge"
    degree: int = 3
    interaction_order: int = 2
    penalty_grid: Optional[list] = None
    bandwidth: Optional[float] = None
    cv_folds: int = 5
    random_state: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerSpec":
        d = dict(d)
        known = {k: d.pop(k) for k in list(d) if k in cls.__dataclass_fields__ and k != "extra"}
        if d:
            raise ValueError(f"unknown learner options: {sorted(d)}")
        return cls(**known)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("extra")
        return out

    def build(self):
        if self.kind == "PolyRidge":
            return PolyRidge(
                degree=self.degree,
                interaction_order=self.interaction_order,
                penalty_grid=self.penalty_grid,
                cv_folds=self.cv_folds,
                random_state=self.random_state,
            )
        if self.kind == "KernelSmoother":
            return KernelSmoother(bandwidth=self.bandwidth)
        if self.kind == "Oracle":
            raise ValueError("Oracle learners need a Python function; build OracleRegressor directly")
        raise ValueError(f"unknown learner kind {self.kind!r}")
