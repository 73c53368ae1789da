import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siomed.basis import (
    LinkSpec,
    SieveFeatures,
    build_basis,
    discrete_degrees,
    evaluate_basis,
    fit_standardization,
    link_apply,
    link_grad,
)
from siomed.exceptions import InvalidConfigError


def test_cubic_scalar_basis_has_four_terms():
    spec = build_basis("polynomial", [3], dims=1)
    assert spec.total_terms == 4
    np.testing.assert_allclose(evaluate_basis(spec, [0.5]), [1, 0.5, 0.25, 0.125])


def test_bivariate_total_degree_three_has_ten_terms():
    assert build_basis("polynomial", [3, 3], dims=2).total_terms == 10


def test_degree_zero_is_constant_only():
    spec = build_basis("polynomial", [0], dims=1)
    assert spec.total_terms == 1
    assert evaluate_basis(spec, [7.0]).tolist() == [1.0]


def test_zero_dims_rejected():
    with pytest.raises(InvalidConfigError):
        build_basis("polynomial", [], dims=0)


@pytest.mark.parametrize("bad", [dict(family="wavelet"), dict(truncation="diagonal"), dict(degrees=[-1])])
def test_bad_config_rejected(bad):
    kwargs = dict(family="polynomial", degrees=[2], dims=1, truncation="total") | bad
    with pytest.raises(InvalidConfigError):
        build_basis(**kwargs)


def test_linear_bivariate_evaluation():
    spec = build_basis("polynomial", [1, 1], dims=2)
    np.testing.assert_allclose(evaluate_basis(spec, [2.0, 3.0]), [1, 2, 3])


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        evaluate_basis(build_basis("polynomial", [1, 1], dims=2), [1.0])


def test_additive_and_tensor_counts():
    assert build_basis("polynomial", [3, 3], 2, "additive").total_terms == 7
    assert build_basis("polynomial", [3, 3], 2, "tensor").total_terms == 16


def test_discrete_columns_capped_at_one():
    pts = np.column_stack([np.linspace(0, 1, 20), np.tile([0.0, 1.0], 10)])
    assert discrete_degrees(pts, 3) == [3, 1]


@pytest.mark.parametrize("family", ["polynomial", "spline", "fourier"])
@settings(max_examples=30, deadline=None)
@given(pts=st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=20),
       c=st.floats(-1e3, 1e3))
def test_constant_reproduction_and_leading_one(family, pts, c):
    spec = build_basis(family, [4, 2], dims=2)
    design = spec.evaluate(np.array(pts))
    assert np.all(design[:, 0] == 1.0)
    coef = np.zeros(spec.total_terms)
    coef[0] = c
    np.testing.assert_allclose(design @ coef, c)


def test_standardization_midpoint_matches_identity_at_half():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 9, size=(200, 2))
    raw = build_basis("polynomial", [3, 3], dims=2)
    fitted = fit_standardization(raw, pts)
    mid = (pts.min(axis=0) + pts.max(axis=0)) / 2
    np.testing.assert_allclose(fitted.evaluate(mid[None, :]), raw.evaluate(np.array([[0.5, 0.5]])), atol=1e-12)


def test_standardization_constant_column_keeps_unit_scale():
    pts = np.column_stack([np.full(5, 2.0), np.arange(5.0)])
    spec = fit_standardization(build_basis("polynomial", [1, 1], dims=2), pts)
    assert spec.scale[0] == 1.0


@pytest.mark.parametrize(
    "kind,v,value",
    [("inverse_logistic", 0.0, 2.0), ("double_exponential", 0.0, np.e), ("identity", 1.5, 1.5)],
)
def test_link_values(kind, v, value):
    assert link_apply(LinkSpec(kind), v) == pytest.approx(value, rel=1e-12)


def test_inverse_logistic_gradient_at_zero():
    assert link_grad(LinkSpec("inverse_logistic"), 0.0) == pytest.approx(-1.0)


@pytest.mark.parametrize("kind", ["inverse_logistic", "double_exponential", "identity"])
def test_link_gradient_matches_finite_differences(kind):
    link = LinkSpec(kind)
    grid = np.linspace(-20, 20, 401)
    if kind == "double_exponential":
        grid = grid[grid <= 3]  # exp(exp(v)) overflows double precision beyond this
    h = 1e-6
    fd = (link.apply(grid + h) - link.apply(grid - h)) / (2 * h)
    an = link.grad(grid)
    rel = np.abs(an - fd) / np.maximum(1.0, np.abs(an))
    # central differences carry rounding error ~ eps * |f| / h
    allowed = 1e-6 + 1e-15 * np.abs(link.apply(grid)) / h
    assert np.all(rel < allowed)


@pytest.mark.parametrize("kind", ["inverse_logistic", "double_exponential"])
def test_nonlinear_links_map_above_one_and_are_monotone(kind):
    link = LinkSpec(kind)
    v = np.linspace(-30, 3, 1000)
    out = link.apply(v)
    assert np.all(out >= 1.0) and np.all(np.isfinite(out))
    steps = np.diff(out)
    assert np.all(steps <= 0) if kind == "inverse_logistic" else np.all(steps >= 0)
    assert np.all(link.grad(v) != 0) and np.all(np.isfinite(link.grad(v)))


def test_link_clamps_huge_arguments():
    link = LinkSpec("inverse_logistic")
    assert np.isfinite(link.apply(-1e6))
    assert np.isfinite(link.grad(-1e6))


def test_link_inverse_roundtrip():
    link = LinkSpec("inverse_logistic")
    y = np.array([1.5, 2.0, 10.0])
    np.testing.assert_allclose(link.apply(link.inverse(y)), y)


def test_unknown_link_rejected():
    with pytest.raises(InvalidConfigError):
        LinkSpec("probit")


def test_sieve_features_transformer():
    X = np.random.default_rng(1).uniform(size=(50, 2))
    feats = SieveFeatures(degree=2).fit(X)
    out = feats.transform(X)
    assert out.shape == (50, 6)
    assert feats.get_params()["degree"] == 2
