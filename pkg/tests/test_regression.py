import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from lsade.regression import (
    KernelSmoother,
    LearnerSpec,
    OracleRegressor,
    PolyRidge,
    poly_exponents,
)


def test_basis_size():
    # univariate powers 3*3 plus pairwise x^i y^j (i,j >= 1, i+j <= 3) 3*3
    assert len(poly_exponents(3, 3, 2)) == 18
    assert len(poly_exponents(3, 3, 1)) == 9
    assert len(set(poly_exponents(4, 4, 2))) == len(poly_exponents(4, 4, 2))


def test_exact_linear_recovery():
    x = np.arange(10, dtype=float).reshape(-1, 1) * 0.7 - 2.0
    v = 2.0 * x[:, 0] + 1.0
    model = PolyRidge(degree=1, penalty_grid=[1e-6]).fit(x, v)
    np.testing.assert_allclose(model.predict(x), v, atol=1e-6)


@pytest.mark.parametrize("weights", [None, [1, 2, 3, 0.5, 0, 4, 1, 1]])
def test_constant_response(weights):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 2))
    model = PolyRidge().fit(x, np.full(8, 3.25), sample_weight=weights)
    np.testing.assert_allclose(model.predict(rng.normal(size=(5, 2))), 3.25, atol=1e-8)


def test_zero_weight_rows_drop_out():
    x = np.array([[0.0], [1.0], [5.0], [-3.0]])
    v = np.array([1.0, 4.0, 100.0, -50.0])
    full = PolyRidge(degree=1, penalty_grid=[0.5]).fit(x, v, sample_weight=[1, 1, 0, 0])
    sub = PolyRidge(degree=1, penalty_grid=[0.5]).fit(x[:2], v[:2])
    np.testing.assert_allclose(full.predict(x), sub.predict(x), atol=1e-10)
    # the fitted constant is the weighted mean of the retained rows
    flat = PolyRidge(degree=1, penalty_grid=[1e12]).fit(x, v, sample_weight=[1, 1, 0, 0])
    np.testing.assert_allclose(flat.predict(x), 2.5, atol=1e-8)


def test_zero_total_weight():
    with pytest.raises(ValueError, match="sums to zero"):
        PolyRidge().fit(np.ones((3, 1)), np.ones(3), sample_weight=[0, 0, 0])
    with pytest.raises(ValueError):
        KernelSmoother().fit(np.ones((3, 1)), np.ones(3), sample_weight=[0, 0, 0])


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        PolyRidge().fit(np.ones((3, 1)), np.ones(3), sample_weight=[1, -1, 1])


def test_bad_penalty_grid():
    with pytest.raises(ValueError):
        PolyRidge(penalty_grid=[]).fit(np.arange(4.0).reshape(-1, 1), np.arange(4.0))
    with pytest.raises(ValueError):
        PolyRidge(penalty_grid=[1.0, 0.0]).fit(np.arange(4.0).reshape(-1, 1), np.arange(4.0))


def _data(seed=0, n=60, p=2):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, p))
    v = np.sin(2 * x[:, 0]) + x[:, 1] ** 2 + 0.1 * rng.normal(size=n)
    w = rng.exponential(size=n)
    return x, v, w


@settings(max_examples=20, deadline=None)
@given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_weight_scale_invariance(c, seed):
    x, v, w = _data(seed)
    for est in (PolyRidge(), KernelSmoother()):
        a = clone(est).fit(x, v, sample_weight=w).predict(x)
        b = clone(est).fit(x, v, sample_weight=c * w).predict(x)
        np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(-50, 50).filter(lambda t: abs(t) > 1e-3), gamma=st.floats(-50, 50), seed=st.integers(0, 1000))
def test_affine_equivariance(alpha, gamma, seed):
    x, v, w = _data(seed)
    base = PolyRidge(penalty_grid=[0.3]).fit(x, v, sample_weight=w).predict(x)
    moved = PolyRidge(penalty_grid=[0.3]).fit(x, alpha * v + gamma, sample_weight=w).predict(x)
    np.testing.assert_allclose(moved, alpha * base + gamma, rtol=1e-8, atol=1e-8 * (1 + abs(alpha) + abs(gamma)))


def test_cv_beats_intercept_on_smooth_truth():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(3000, 3))
    v = x[:, 0] + 0.5 * x[:, 0] ** 3 - 2 * x[:, 1] ** 2 + x[:, 0] ** 2 * x[:, 1] + rng.normal(size=3000)
    w = rng.uniform(0.2, 2, size=3000)
    pred = PolyRidge().fit(x, v, sample_weight=w).predict(x)
    mse = np.average((v - pred) ** 2, weights=w)
    mse0 = np.average((v - np.average(v, weights=w)) ** 2, weights=w)
    assert mse <= mse0


def test_penalty_tie_goes_larger():
    assert PolyRidge._select(np.array([0.1, 1.0, 10.0]), np.array([2.0, 1.0, 1.0])) == 10.0
    assert PolyRidge._select(np.array([0.1, 1.0, 10.0]), np.array([1.0, 2.0, 3.0])) == 0.1


def test_ill_conditioned_basis_is_not_fatal():
    x = np.column_stack([np.linspace(0, 1, 20), np.linspace(0, 1, 20)])
    v = x[:, 0] * 3
    pred = PolyRidge(degree=3).fit(x, v).predict(x)
    assert np.all(np.isfinite(pred))
    np.testing.assert_allclose(pred, v, atol=1e-3)


def test_deterministic():
    x, v, w = _data(1)
    a = PolyRidge().fit(x, v, sample_weight=w).predict(x)
    b = PolyRidge().fit(x, v, sample_weight=w).predict(x)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("est", [PolyRidge(), KernelSmoother(), OracleRegressor(lambda X: X[:, 0])])
def test_column_mismatch(est):
    est.fit(np.ones((4, 2)) * np.arange(4)[:, None], np.arange(4.0))
    with pytest.raises(ValueError, match="features"):
        est.predict(np.ones((2, 3)))


def test_interpolation_at_training_point():
    x = np.linspace(-1, 1, 7).reshape(-1, 1)
    v = x[:, 0] ** 3 - x[:, 0]
    model = PolyRidge(degree=3, penalty_grid=[1e-10]).fit(x, v)
    np.testing.assert_allclose(model.predict(x[2:3]), v[2], atol=1e-7)


def test_oracle():
    est = OracleRegressor(lambda z: z[:, 0] ** 2).fit(np.zeros((2, 3)), [9.0, 9.0])
    assert est.predict(np.array([[0.5, 7.0, -1.0]]))[0] == 0.25


def test_kernel_infinite_bandwidth_is_weighted_mean():
    x, v, w = _data(4, n=30)
    pred = KernelSmoother(bandwidth=1e8).fit(x, v, sample_weight=w).predict(np.random.default_rng(0).normal(size=(5, 2)))
    np.testing.assert_allclose(pred, np.sum(w * v) / np.sum(w), rtol=1e-10)


def test_kernel_small_bandwidth_recovers_strata():
    z = np.array([[0.0], [0.0], [0.0], [1.0], [1.0], [1.0]])
    v = np.array([1.0, 2.0, 6.0, -1.0, 3.0, 4.0])
    w = np.array([1.0, 2.0, 1.0, 3.0, 1.0, 1.0])
    pred = KernelSmoother(bandwidth=0.01).fit(z, v, sample_weight=w).predict(np.array([[0.0], [1.0]]))
    np.testing.assert_allclose(pred, [(1 + 4 + 6) / 4, (-3 + 3 + 4) / 5], atol=1e-12)


def test_kernel_far_query_is_finite():
    x = np.linspace(0, 1, 10).reshape(-1, 1)
    pred = KernelSmoother(bandwidth=0.01).fit(x, x[:, 0]).predict(np.array([[1e6]]))
    assert np.isfinite(pred).all()


def test_sklearn_params_roundtrip():
    est = PolyRidge(degree=2, cv_folds=3)
    assert clone(est).get_params() == est.get_params()
    est.set_params(degree=4)
    assert est.degree == 4


def test_learner_spec():
    spec = LearnerSpec.from_dict({"kind": "PolyRidge", "degree": 2})
    assert isinstance(spec.build(), PolyRidge) and spec.build().degree == 2
    assert isinstance(LearnerSpec(kind="KernelSmoother", bandwidth=0.3).build(), KernelSmoother)
    with pytest.raises(ValueError):
        LearnerSpec.from_dict({"kind": "PolyRidge", "depth": 2})
    with pytest.raises(ValueError):
        LearnerSpec(kind="Forest").build()
