"""Monte Carlo harness on a known structural model.

    Z1, Z2, Z3 ~ Uniform(-1, 1),  e1, e2 ~ N(0, 1)
    A = Z1 + 0.5 Z1^3 - 2 Z2^2 + Z1^2 Z2 + (1 + Z1^2) e1
    Y = A (1 + Z1 - Z1^2 - 0.5 Z2^2) - Z1^2 Z2 + Z2 Z3 + e2

True values: psi = 1/2 and Psi = 107/294.

Random numbers come from numpy's PCG64 generator. Uniforms use
``Generator.uniform`` (53-bit mantissa doubles) and normals use
``Generator.standard_normal`` (ziggurat). Replication ``r`` of a study with
seed ``s`` draws from ``SeedSequence(s, spawn_key=(r,))``, so results do not
depend on execution order or on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .core import ESTIMANDS, Dataset, NuisancePredictions, make_folds
from .estimators import check_estimand_algorithm, estimate_Psi, estimate_psi, parse_algorithm
from .nuisance import NuisanceConfig, estimate_nuisances
from .regression import LearnerSpec

TRUE_PSI_SMALL = 0.5
TRUE_PSI_RATIO = Fraction(107, 294)
TRUTH = {"psi": TRUE_PSI_SMALL, "Psi": float(TRUE_PSI_RATIO)}

SCHEMA_VERSION = "1"


def pi_fn(z: np.ndarray) -> np.ndarray:
    z1, z2 = z[:, 0], z[:, 1]
    return z1 + 0.5 * z1**3 - 2.0 * z2**2 + z1**2 * z2


def lambda_fn(z: np.ndarray) -> np.ndarray:
    z1, z2 = z[:, 0], z[:, 1]
    return 1.0 + z1 - z1**2 - 0.5 * z2**2


def beta_fn(z: np.ndarray) -> np.ndarray:
    return (1.0 + z[:, 0] ** 2) ** 2


def mu_fn(z: np.ndarray) -> np.ndarray:
    z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
    return pi_fn(z) * lambda_fn(z) - z1**2 * z2 + z2 * z3


def _rng(seed: int, rep: Optional[int] = None) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=() if rep is None else (int(rep),))
    return np.random.Generator(np.random.PCG64(ss))


def generate(n: int, seed: int = 0, rng: Optional[np.random.Generator] = None) -> Dataset:
    """Draw ``n`` observations from the structural model."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if rng is not None else _rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(n, 3))
    eps = rng.standard_normal(size=(n, 2))
    z1 = z[:, 0]
    a = pi_fn(z) + (1.0 + z1**2) * eps[:, 0]
    y = a * lambda_fn(z) - z1**2 * z[:, 1] + z[:, 1] * z[:, 2] + eps[:, 1]
    if n == 1:
        # Dataset requires two rows; callers asking for one get the raw arrays
        raise ValueError("generate needs n >= 2 to build a Dataset")
    return Dataset(y=y, a=a, z=z)


def oracle_nuisances(data: Dataset) -> NuisancePredictions:
    """Exact nuisance values of the structural model at each row."""
    z = data.z
    if z.shape[1] < 3:
        raise ValueError("oracle nuisances need the three model covariates")
    return NuisancePredictions(
        pi_hat=pi_fn(z),
        mu_hat=mu_fn(z),
        lambda_hat=lambda_fn(z),
        beta_hat=beta_fn(z),
        diagnostics={"variant": "oracle"},
    )


@dataclass
class SimConfig:
    """One cell of a simulation study.

    ``nuisance="oracle"`` plugs in the true nuisance functions and ignores
    ``algorithm``/``K``/learners; ``"learned"`` runs the chosen algorithm.
    """

    n: int = 1000
    reps: int = 100
    seed: int = 0
    algorithm: str = "2B"
    K: int = 5
    estimands: tuple = ("Psi", "psi")
    nuisance: str = "learned"
    learner_pi: LearnerSpec = field(default_factory=LearnerSpec)
    learner_mu: LearnerSpec = field(default_factory=LearnerSpec)
    learner_aux: LearnerSpec = field(default_factory=LearnerSpec)
    beta_floor: Optional[float] = None
    level: float = 0.95

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("n must be >= 10")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.nuisance not in ("learned", "oracle"):
            raise ValueError("nuisance must be 'learned' or 'oracle'")
        self.estimands = tuple(self.estimands)
        for name in ("learner_pi", "learner_mu", "learner_aux"):
            val = getattr(self, name)
            if isinstance(val, dict):
                setattr(self, name, LearnerSpec.from_dict(val))
        if self.nuisance == "learned":
            check_estimand_algorithm(self.estimands, self.algorithm, self.K)
        else:
            for e in self.estimands:
                if e not in ESTIMANDS:
                    raise ValueError(f"unknown estimand {e!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["estimands"] = list(self.estimands)
        for name in ("learner_pi", "learner_mu", "learner_aux"):
            out[name] = getattr(self, name).to_dict()
        return out

    @property
    def label(self) -> str:
        return "oracle" if self.nuisance == "oracle" else self.algorithm


def _one_rep(config: SimConfig, rep: int) -> dict:
    rng = _rng(config.seed, rep)
    data = generate(config.n, rng=rng)
    fold_seed = int(rng.integers(0, 2**63 - 1))
    out = {}
    try:
        if config.nuisance == "oracle":
            nuis = oracle_nuisances(data)
            K = 1
        else:
            split, variant = parse_algorithm(config.algorithm)
            K = config.K if split else 1
            folds = make_folds(data.n, K, fold_seed)
            nconf = NuisanceConfig(
                variant=variant,
                learner_pi=config.learner_pi.build(),
                learner_mu=config.learner_mu.build(),
                learner_aux=config.learner_aux.build(),
                beta_floor=config.beta_floor,
            )
            nuis = estimate_nuisances(data, folds, nconf)
    except Exception as exc:  # noqa: BLE001 - recorded, replication excluded
        return {e: {"error": f"{type(exc).__name__}: {exc}"} for e in config.estimands}
    for e in config.estimands:
        try:
            fn = estimate_Psi if e == "Psi" else estimate_psi
            rep_ = fn(data, nuis, algorithm=config.label, folds=K)
            out[e] = {
                "point": rep_.point,
                "variance": rep_.variance,
                "n_beta_clipped": int(rep_.diagnostics.get("n_beta_clipped", 0)),
            }
        except Exception as exc:  # noqa: BLE001
            out[e] = {"error": f"{type(exc).__name__}: {exc}"}
    return out


@dataclass
class EstimandSummary:
    estimand: str
    truth: float
    scaled_bias: float
    scaled_variance: float
    coverage: float
    mean_estimate: float
    n_used: int
    n_failed: int
    n_nonfinite: int
    variance_defined: bool
    estimates: list
    variances: list


@dataclass
class SimResult:
    config: SimConfig
    summaries: dict

    def to_dict(self, include_reps: bool = True) -> dict:
        res = []
        for e, s in self.summaries.items():
            d = asdict(s)
            if not include_reps:
                d.pop("estimates")
                d.pop("variances")
            res.append(d)
        return {"version": SCHEMA_VERSION, "config": self.config.to_dict(), "results": res}

    def to_json(self, include_reps: bool = True) -> str:
        return dumps(self.to_dict(include_reps))

    def long_rows(self) -> list[tuple]:
        rows = []
        for e, s in self.summaries.items():
            for metric in ("scaled_bias", "scaled_variance", "coverage", "mean_estimate", "n_used", "n_failed", "n_nonfinite"):
                rows.append((self.config.n, self.config.label, e, metric, getattr(s, metric)))
        return rows

    def to_csv(self) -> str:
        return long_csv(self.long_rows())


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("NaN" if math.isnan(v) else ("Infinity" if v > 0 else "-Infinity"))
    return str(v)


def long_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "algorithm", "estimand", "metric", "value"])
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isfinite(obj):
            # 17 significant digits round-trip every double
            return float(f"{obj:.17g}")
        return None
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=False, allow_nan=False)


def summarize(estimand: str, truth: float, n: int, reps: list, level: float = 0.95) -> EstimandSummary:
    from .core import wald_inference

    points, variances, n_failed, n_nonfinite = [], [], 0, 0
    for r in reps:
        if "error" in r:
            n_failed += 1
        elif math.isfinite(r["point"]) and math.isfinite(r["variance"]):
            points.append(r["point"])
            variances.append(r["variance"])
        else:
            n_nonfinite += 1
    pts = np.array(points)
    m = len(pts)
    if m == 0:
        nan = float("nan")
        return EstimandSummary(estimand, truth, nan, nan, nan, nan, 0, n_failed, n_nonfinite, False, [], [])
    covered = 0
    for p, v in zip(points, variances):
        lo, hi, _ = wald_inference(p, v, level)
        covered += lo <= truth <= hi
    defined = m >= 2
    return EstimandSummary(
        estimand=estimand,
        truth=truth,
        scaled_bias=float(math.sqrt(n) * (math.fsum(pts) / m - truth)),
        scaled_variance=float(n * np.var(pts, ddof=1)) if defined else float("nan"),
        coverage=covered / m,
        mean_estimate=math.fsum(pts) / m,
        n_used=m,
        n_failed=n_failed,
        n_nonfinite=n_nonfinite,
        variance_defined=defined,
        estimates=[float(p) for p in points],
        variances=[float(v) for v in variances],
    )


def run_study(config: SimConfig, n_jobs: int = 1) -> SimResult:
    """Run ``config.reps`` replications and aggregate bias, variance and coverage.

    Bias is scaled by ``sqrt(n)`` and variance by ``n``. Replications that
    raise, or give non-finite estimates, are excluded and counted; extreme
    finite estimates are kept.
    """
    if n_jobs == 1:
        outs = [_one_rep(config, r) for r in range(config.reps)]
    else:
        outs = Parallel(n_jobs=n_jobs)(delayed(_one_rep)(config, r) for r in range(config.reps))
    summaries = {
        e: summarize(e, TRUTH[e], config.n, [o[e] for o in outs], config.level) for e in config.estimands
    }
    return SimResult(config, summaries)
