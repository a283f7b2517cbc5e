"""Shared data containers, fold assignment and Wald inference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

ESTIMANDS = ("Psi", "psi")
ALGORITHMS = ("1A", "1B", "2A", "2B", "1", "2")

Z_95 = float(ndtri(0.975))


def _as_readonly(x, ndim: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=np.float64, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"{name} contains a non-finite value at index {tuple(int(i) for i in bad)}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observations ``(y_i, a_i, z_i)``: outcome, continuous exposure, covariates."""

    y: np.ndarray
    a: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = _as_readonly(self.y, 1, "y")
        a = _as_readonly(self.a, 1, "a")
        z = _as_readonly(self.z, 2, "z")
        if not (len(y) == len(a) == z.shape[0]):
            raise ValueError(
                f"row counts differ: y={len(y)}, a={len(a)}, z={z.shape[0]}"
            )
        if len(y) < 2:
            raise ValueError("a Dataset needs at least 2 rows")
        if z.shape[1] < 1:
            raise ValueError("z needs at least one covariate column")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.z.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.y[idx], self.a[idx], self.z[idx])


@dataclass(frozen=True)
class FoldAssignment:
    """Fold index of every row. ``K == 1`` means no sample splitting."""

    fold_of: np.ndarray
    K: int

    def __post_init__(self):
        fold_of = np.array(self.fold_of, dtype=np.int64, copy=True)
        if fold_of.ndim != 1:
            raise ValueError("fold_of must be 1-dimensional")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if fold_of.size and (fold_of.min() < 0 or fold_of.max() >= self.K):
            raise ValueError(f"fold indices must lie in [0, {self.K})")
        fold_of.flags.writeable = False
        object.__setattr__(self, "fold_of", fold_of)

    @property
    def n(self) -> int:
        return len(self.fold_of)

    def split(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(train_idx, test_idx)`` for fold ``k``.

        With ``K == 1`` both are all rows (fit and predict in-sample).
        """
        if self.K == 1:
            idx = np.arange(self.n)
            return idx, idx
        test = np.flatnonzero(self.fold_of == k)
        train = np.flatnonzero(self.fold_of != k)
        return train, test

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K)


def make_folds(n: int, K: int, seed: int = 0) -> FoldAssignment:
    """Balanced, seeded fold assignment.

    The row indices are shuffled with a seeded Fisher-Yates permutation
    (numpy ``Generator.permutation`` on a PCG64 stream) and dealt round-robin,
    so the j-th shuffled row goes to fold ``j % K``. Fold sizes therefore
    differ by at most one.
    """
    n = int(n)
    K = int(K)
    if K < 1 or K > n:
        raise ValueError(f"need 1 <= K <= n, got K={K}, n={n}")
    if K == 1:
        return FoldAssignment(np.zeros(n, dtype=np.int64), 1)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1))))
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % K
    return FoldAssignment(fold_of, K)


@dataclass(frozen=True)
class NuisancePredictions:
    """Per-row nuisance values; out-of-fold when produced by cross-fitting."""

    pi_hat: np.ndarray
    mu_hat: np.ndarray
    lambda_hat: Optional[np.ndarray] = None
    beta_hat: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.pi_hat)
        for name in ("pi_hat", "mu_hat", "lambda_hat", "beta_hat"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.array(val, dtype=np.float64, copy=True)
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.pi_hat)


def wald_inference(point: float, variance: float, level: float = 0.95) -> tuple[float, float, float]:
    """Normal-approximation interval and two-sided p-value for ``point = 0``.

    A zero variance gives a degenerate interval ``(point, point)`` and a
    p-value of 0 (or 1 when the point is exactly zero).
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if not variance >= 0.0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    z = float(ndtri(1.0 - (1.0 - level) / 2.0))
    se = math.sqrt(variance)
    lo, hi = point - z * se, point + z * se
    if se == 0.0:
        p = 1.0 if point == 0.0 else 0.0
    else:
        p = float(2.0 * ndtr(-abs(point) / se))
    return lo, hi, min(1.0, max(0.0, p))


@dataclass(frozen=True)
class EstimateReport:
    estimand: str
    point: float
    variance: float
    ci_lower: float
    ci_upper: float
    p_value: float
    ic_values: np.ndarray
    algorithm: str
    n: int
    folds: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance)

    def to_dict(self, include_ic: bool = False) -> dict:
        out = {
            "estimand": self.estimand,
            "algorithm": self.algorithm,
            "n": self.n,
            "folds": self.folds,
            "point": self.point,
            "variance": self.variance,
            "std_error": self.std_error,
            "ci": [self.ci_lower, self.ci_upper],
            "p_value": self.p_value,
            "diagnostics": dict(self.diagnostics),
        }
        if include_ic:
            out["ic_values"] = [float(v) for v in self.ic_values]
        return out

    def summary(self) -> str:
        return (
            f"{self.estimand} (Alg {self.algorithm}, n={self.n}, K={self.folds}): "
            f"{self.point:.6g}  CI ({self.ci_lower:.6g}, {self.ci_upper:.6g})  p={self.p_value:.4g}"
        )
