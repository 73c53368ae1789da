import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from siomed.basis import build_basis, fit_standardization
from siomed.exceptions import InsufficientDataError
from siomed.seriesreg import SeriesRegressor, fit_series, predict_series, projection_matrix


def _poly(points, degree=2):
    spec = build_basis("polynomial", [degree] * points.shape[1], points.shape[1])
    return fit_standardization(spec, points)


def test_constant_response_is_reproduced():
    pts = np.random.default_rng(0).normal(size=(40, 2))
    fit = fit_series(np.full(40, 3.7), pts, _poly(pts))
    np.testing.assert_allclose(fit.predict(pts), 3.7, atol=1e-10)
    assert predict_series(fit, [0.3, -0.4]) == pytest.approx(3.7, abs=1e-8)


def test_linear_response_is_reproduced():
    pts = np.random.default_rng(1).uniform(size=(50, 3))
    v = 2 + pts @ np.array([1.0, -3.0, 0.5])
    fit = fit_series(v, pts, _poly(pts, 1))
    np.testing.assert_allclose(fit.predict(pts), v, atol=1e-10)


def test_two_point_mean():
    pts = np.array([[0.0], [1.0]])
    fit = fit_series([1.0, 3.0], pts, build_basis("polynomial", [0], 1))
    assert predict_series(fit, [5.0]) == pytest.approx(2.0)
    np.testing.assert_allclose(projection_matrix(fit) @ np.array([1.0, 3.0]), [2.0, 2.0])


def test_pooled_equals_single_arm_fit():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(30, 1))
    v = rng.normal(size=30)
    pooled = fit_series(v, pts, _poly(pts))
    armed = fit_series(v, pts, _poly(pts), arm_labels=np.ones(30))
    np.testing.assert_allclose(pooled.predict(pts), armed.predict(pts, np.ones(30)), atol=1e-12)


def test_unfitted_arm_raises():
    pts = np.random.default_rng(3).normal(size=(20, 1))
    fit = fit_series(np.zeros(20), pts, _poly(pts), arm_labels=np.ones(20))
    with pytest.raises(KeyError):
        predict_series(fit, [0.0], arm=0)


def test_too_few_rows_raises():
    pts = np.random.default_rng(4).normal(size=(10, 2))
    arms = np.r_[np.zeros(8), np.ones(2)]
    with pytest.raises(InsufficientDataError):
        fit_series(np.zeros(10), pts, _poly(pts), arm_labels=arms)


def test_subgroup_mask_restricts_rows():
    pts = np.arange(6.0)[:, None]
    v = np.array([1.0, 1.0, 1.0, 9.0, 9.0, 9.0])
    mask = np.array([True, True, True, False, False, False])
    fit = fit_series(v, pts, build_basis("polynomial", [0], 1), subgroup_mask=mask)
    assert predict_series(fit, [4.0]) == pytest.approx(1.0)
    assert fit.n_per_arm["pooled"] == 3


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(30, 120), scale=st.floats(0.1, 100))
def test_orthogonality_and_arm_additivity(seed, n, scale):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2, 2, size=(n, 2))
    arms = np.r_[np.zeros(15), np.ones(15), rng.integers(0, 2, n - 30)]
    v = scale * (np.sin(pts[:, 0]) + rng.normal(size=n))
    basis = _poly(pts)
    fit = fit_series(v, pts, basis, arm_labels=arms)
    design = basis.evaluate(pts)
    fitted = fit.predict(pts, arms)
    for a in (0, 1):
        sel = arms == a
        assert np.all(np.abs(design[sel].T @ (v[sel] - fitted[sel])) <= 1e-6 * n * max(1.0, scale))
    by_arm = arms * fit.predict(pts, np.ones(n)) + (1 - arms) * fit.predict(pts, np.zeros(n))
    np.testing.assert_array_equal(fitted, by_arm)


@settings(max_examples=40, deadline=None)
@given(coef=arrays(float, 6, elements=st.floats(-10, 10)), seed=st.integers(0, 1000))
def test_coefficient_reproduction(coef, seed):
    pts = np.random.default_rng(seed).uniform(size=(60, 2))
    basis = _poly(pts)
    fit = fit_series(basis.evaluate(pts) @ coef, pts, basis)
    np.testing.assert_allclose(fit.arm_coefficients["pooled"], coef, atol=1e-6 * max(1.0, np.abs(coef).max()))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_projection_idempotent_and_fixes_basis_columns(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(50, 2))
    basis = _poly(pts)
    fit = fit_series(np.zeros(50), pts, basis)
    proj = projection_matrix(fit)
    v = rng.normal(size=50)
    once = proj @ v
    np.testing.assert_allclose(proj @ once, once, rtol=1e-8, atol=1e-8 * np.linalg.norm(v))
    col = basis.evaluate(pts)[:, 3]
    np.testing.assert_allclose(proj @ col, col, atol=1e-8 * np.linalg.norm(col))


def test_regressor_is_sklearn_compatible():
    from sklearn.base import clone

    X = np.random.default_rng(5).uniform(size=(80, 2))
    y = 1 + X[:, 0] ** 2
    model = clone(SeriesRegressor(degree=2)).fit(X, y)
    assert model.score(X, y) > 0.999999
