"""Acceptance suite: every criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per criterion
is printed in the terminal summary. Seeds are fixed in advance.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from lsade.cli import main
from lsade.core import Dataset, NuisancePredictions
from lsade.estimators import estimate_Psi, estimate_psi
from lsade.regression import KernelSmoother, PolyRidge
from lsade.simulation import TRUTH, SimConfig, generate, oracle_nuisances, run_study
from lsade.weights import check_normalization, weight_grid
from weight_cases import CASES, interior_grid

SEED = 12345

pytestmark = pytest.mark.acceptance


def test_1_oracle_truth_recovery(record):
    t0 = time.perf_counter()
    data = generate(100_000, seed=SEED)
    nuis = oracle_nuisances(data)
    Psi = estimate_Psi(data, nuis).point
    psi = estimate_psi(data, nuis).point
    elapsed = time.perf_counter() - t0
    ok = [
        record(1, "|Psi-107/294|", abs(Psi - TRUTH["Psi"]) <= 0.01, f"{abs(Psi - TRUTH['Psi']):.5f} <= 0.01"),
        record(1, "|psi-0.5|", abs(psi - 0.5) <= 0.01, f"{abs(psi - 0.5):.5f} <= 0.01"),
        record(1, "runtime", elapsed < 30, f"{elapsed:.2f}s < 30s"),
    ]
    assert all(ok)


def test_2_oracle_coverage(record):
    t0 = time.perf_counter()
    res = run_study(SimConfig(n=1000, reps=500, seed=SEED, nuisance="oracle"))
    elapsed = time.perf_counter() - t0
    ok = []
    for e in ("psi", "Psi"):
        cov = res.summaries[e].coverage
        ok.append(record(2, f"coverage {e}", 0.92 <= cov <= 0.97, f"{cov:.3f} in [0.92, 0.97]"))
    ok.append(record(2, "runtime", elapsed < 120, f"{elapsed:.1f}s < 120s"))
    assert all(ok)


@pytest.fixture(scope="module")
def learned_studies():
    t0 = time.perf_counter()
    b = run_study(SimConfig(n=2000, reps=200, seed=SEED, algorithm="2B", K=5), n_jobs=-1)
    a = run_study(SimConfig(n=2000, reps=200, seed=SEED, algorithm="2A", K=5, estimands=("psi",)), n_jobs=-1)
    return a, b, time.perf_counter() - t0


def test_3a_learned_psi_coverage(learned_studies, record):
    _, b, _ = learned_studies
    s = b.summaries["psi"]
    assert record(3, "2B psi coverage", s.coverage >= 0.88, f"{s.coverage:.3f} >= 0.88 ({s.n_used} reps)")


def test_3b_learned_Psi_scaled_bias(learned_studies, record):
    _, b, _ = learned_studies
    s = b.summaries["Psi"]
    # context only: Monte Carlo standard error, and the same samples with true nuisances
    mc_se = math.sqrt(s.scaled_variance / s.n_used)
    oracle = run_study(SimConfig(n=2000, reps=200, seed=SEED, nuisance="oracle", estimands=("Psi",)))
    detail = (
        f"{abs(s.scaled_bias):.3f} <= 0.15 (MC se {mc_se:.3f}; "
        f"true nuisances on the same samples {oracle.summaries['Psi'].scaled_bias:+.3f})"
    )
    assert record(3, "2B |Psi scaled bias|", abs(s.scaled_bias) <= 0.15, detail)


def test_3c_direct_variance_exceeds_quasi_oracle(learned_studies, record):
    a, b, elapsed = learned_studies
    va, vb = a.summaries["psi"].scaled_variance, b.summaries["psi"].scaled_variance
    ok = record(3, "scaled var psi 2A > 2B", va > vb, f"{va:.3g} > {vb:.3g}")
    ok &= record(3, "runtime", elapsed < 1200, f"{elapsed:.0f}s < 1200s")
    assert ok


def _aipw_case(rng, n):
    z = rng.uniform(-1, 1, size=(n, 2))
    e = rng.uniform(0.05, 0.95, size=n)
    a = (rng.uniform(size=n) < e).astype(float)
    a[0], a[1] = 0.0, 1.0
    m0 = rng.normal(scale=3, size=n)
    m1 = m0 + rng.normal(size=n)
    y = np.where(a == 1, m1, m0) + rng.normal(size=n)
    lam = m1 - m0
    nuis = NuisancePredictions(e, m0 + lam * e, lam, e * (1 - e))
    aipw = np.mean(m1 - m0 + a * (y - m1) / e - (1 - a) * (y - m0) / (1 - e))
    return Dataset(y=y, a=a, z=z), nuis, aipw


def test_4_aipw_equivalence(record):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for i in range(200):
        data, nuis, expected = _aipw_case(rng, 10 if i < 100 else int(rng.integers(2, 2000)))
        got = estimate_psi(data, nuis).point
        worst = max(worst, abs(got - expected) / max(abs(expected), 1e-300))
    assert record(4, "max rel diff vs AIPW (200 datasets)", worst <= 1e-12, f"{worst:.2e} <= 1e-12")


def test_5_estimating_equation_identities(record):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 5000))
        scale = 10.0 ** rng.uniform(-4, 4)
        data = Dataset(y=scale * rng.standard_t(3, size=n), a=rng.standard_cauchy(size=n), z=rng.normal(size=(n, 1)))
        nuis = NuisancePredictions(
            rng.normal(size=n),
            scale * rng.normal(size=n),
            scale * rng.normal(size=n),
            np.exp(rng.normal(scale=3, size=n)),
        )
        for rep in (estimate_Psi(data, nuis), estimate_psi(data, nuis)):
            worst = max(worst, abs(math.fsum(rep.ic_values) / n) / (1 + abs(rep.point)))
    assert record(5, "max |mean phi|/(1+|point|)", worst <= 1e-10, f"{worst:.2e} <= 1e-10")


@pytest.mark.slow
def test_6_exposure_weights(record):
    worst_rel, worst_norm, worst_norm_num, min_w = 0.0, 0.0, 0.0, math.inf
    for fam in CASES:
        grid = interior_grid(fam)
        closed = weight_grid(fam, grid)
        numeric = weight_grid(fam, grid, method="numeric")
        worst_rel = max(worst_rel, float(np.max(np.abs(numeric - closed) / np.abs(closed))))
        min_w = min(min_w, float(numeric.min()), float(closed.min()))
        worst_norm = max(worst_norm, abs(check_normalization(fam) - 1))
        worst_norm_num = max(worst_norm_num, abs(check_normalization(fam, method="numeric") - 1))
    ok = [
        record(6, "closed vs quadrature (30 cases x 101)", worst_rel <= 1e-5, f"{worst_rel:.2e} <= 1e-5"),
        record(6, "|int w f - 1| closed", worst_norm <= 1e-6, f"{worst_norm:.2e} <= 1e-6"),
        record(6, "|int w f - 1| quadrature", worst_norm_num <= 1e-6, f"{worst_norm_num:.2e} <= 1e-6"),
        record(6, "min w", min_w >= 0, f"{min_w:.3g} >= 0"),
    ]
    assert all(ok)


def test_7_weighted_minimizer_is_moment_ratio(record):
    z = np.array([0, 0, 0, 1, 1, 1], dtype=float).reshape(-1, 1)
    V = [Fraction(3), Fraction(-1, 2), Fraction(7, 4), Fraction(2), Fraction(-5), Fraction(9, 8)]
    W = [Fraction(1, 2), Fraction(2), Fraction(3, 4), Fraction(1), Fraction(5, 2), Fraction(1, 8)]
    # exhaustive arithmetic: E(V|Z=g)/E(W|Z=g) = sum V / sum W within the stratum
    exact = {g: sum(V[i] for i in range(6) if z[i, 0] == g) / sum(W[i] for i in range(6) if z[i, 0] == g) for g in (0, 1)}
    v = np.array([float(x) for x in V])
    w = np.array([float(x) for x in W])
    target = np.array([float(exact[g]) for g in (0, 1)])
    grid = np.array([[0.0], [1.0]])
    worst = 0.0
    for learner in (PolyRidge(degree=1, penalty_grid=[1e-14]), KernelSmoother(bandwidth=0.01)):
        pred = learner.fit(z, v / w, sample_weight=w).predict(grid)
        worst = max(worst, float(np.max(np.abs(pred - target))))
    assert record(7, "max |fit - E(V|Z)/E(W|Z)|", worst <= 1e-10, f"{worst:.2e} <= 1e-10")


def test_8_determinism_across_threads(tmp_path, record):
    base = ["simulate", "--n", "300", "--reps", "16", "--seed", "7", "--algorithm", "2B", "--keep-reps"]
    outputs = {}
    for fmt in ("json", "csv"):
        for threads in (1, 8):
            path = tmp_path / f"{threads}.{fmt}"
            assert main(base + ["--format", fmt, "--threads", str(threads), "-o", str(path)]) == 0
            outputs[fmt, threads] = path.read_bytes()
    same_json = outputs["json", 1] == outputs["json", 8]
    same_csv = outputs["csv", 1] == outputs["csv", 8]
    json.loads(outputs["json", 1])
    ok = [
        record(8, "simulate JSON 1 vs 8 threads", same_json, "byte-identical" if same_json else "differs"),
        record(8, "simulate CSV 1 vs 8 threads", same_csv, "byte-identical" if same_csv else "differs"),
    ]
    data = generate(200, seed=3)
    csv_in = tmp_path / "in.csv"
    np.savetxt(csv_in, np.column_stack([data.y, data.a, data.z]), delimiter=",", header="y,a,z1,z2,z3", comments="")
    runs = []
    for threads in (1, 8):
        out = tmp_path / f"est{threads}.json"
        assert main(["estimate", "-i", str(csv_in), "--threads", str(threads), "-o", str(out)]) == 0
        runs.append(out.read_bytes())
    ok.append(record(8, "estimate JSON 1 vs 8 threads", runs[0] == runs[1], "byte-identical" if runs[0] == runs[1] else "differs"))
    assert all(ok)
