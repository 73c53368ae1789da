"""Weighted sieve fits of the outcome-side nuisance functions.

All fits use only complete rows, each weighted by the estimated inverse
response probability. ``weights`` arguments accept a fitted
:class:`~siomed.smd.WeightFit`, a per-row array of ``R * delta`` values, or
``None`` for unit weights on the complete rows.

gamma(m, x)   E(Y | T=1, M=m, X=x)                       weighted least squares
eta(x)        E{gamma(M, X) | T=0, X=x}                  weighted least squares
mu(t, x)      E(Y | T=t, X=x)                            weighted least squares
b1(x)         1 / P(T=0 | x)                             minimum distance, link sieve
e_t(x)        1 / P(T=t | x)                             minimum distance, link sieve
b2(m, x)      density ratio correcting the T=1 residual  minimum distance, linear sieve
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import LinkSpec, build_basis, discrete_degrees, fit_standardization
from .exceptions import InsufficientDataError
from .seriesreg import weighted_least_squares
from .smd import SmdProblem, WeightFit, solve_smd, weight_values

DOMAINS = ("x", "m,x", "t,m,y,x")


@dataclass(frozen=True, eq=False)
class LinearFit:
    """A fitted sieve function ``link(basis(points)' coef)``.

    ``coefficients`` maps ``"pooled"`` (or an arm label, for functions of
    ``t``) to a coefficient vector. ``domain`` names the arguments the
    function takes, in column order.
    """

    basis: object
    coefficients: dict
    domain: str
    weight_source: str = "unit"
    link: LinkSpec = LinkSpec("identity")

    def predict(self, points, arms=None):
        design = self.basis.evaluate(points)
        if arms is None:
            return self.link.apply(design @ self.coefficients["pooled"])
        arms = np.asarray(arms).ravel()
        v = np.empty(design.shape[0])
        for a in np.unique(arms):
            sel = arms == a
            v[sel] = design[sel] @ self.coefficients[int(a)]
        return self.link.apply(v)

    @classmethod
    def from_weight_fit(cls, fit, domain, weight_source):
        return cls(fit.parameter_basis, dict(fit.coefficients), domain, weight_source, fit.link)


def row_weights(data, weights):
    """Per-row ``R * delta`` from a weight fit, an array, or ``None`` (unit)."""
    if weights is None:
        return data.r.astype(float).copy()
    if isinstance(weights, WeightFit):
        return weight_values(weights, data)
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape != (data.n,):
        raise ValueError(f"weights must have shape ({data.n},)")
    return np.where(data.r == 1, w, 0.0)


def _source(weights):
    if weights is None:
        return "unit"
    return "sieve weight fit" if isinstance(weights, WeightFit) else "supplied weights"


def _complete_basis(points, complete, degree, family, truncation):
    pts = points[complete]
    spec = build_basis(family, discrete_degrees(pts, degree), points.shape[1], truncation)
    return fit_standardization(spec, pts)


def covariate_basis(data, degree=3, family="polynomial", truncation="total"):
    """Basis on X, standardized over the complete rows."""
    return _complete_basis(data.x, data.r == 1, degree, family, truncation)


def mediator_basis(data, degree=3, family="polynomial", truncation="total"):
    """Basis on (M, X), standardized over the complete rows."""
    return _complete_basis(data.mx_points, data.r == 1, degree, family, truncation)


def _wls(design_points, response, w, rows, basis, domain, source, what):
    if rows.sum() < basis.total_terms:
        raise InsufficientDataError(f"{what}: {int(rows.sum())} usable rows for {basis.total_terms} terms")
    coef, _ = weighted_least_squares(basis.evaluate(design_points[rows]), response[rows], w[rows])
    return LinearFit(basis, {"pooled": coef}, domain, source)


def fit_gamma(data, weights, basis_u):
    """Outcome regression on (M, X) among treated complete rows."""
    w = row_weights(data, weights)
    rows = (data.t == 1) & (data.r == 1)
    return _wls(data.mx_points, data.y, w, rows, basis_u, "m,x", _source(weights), "outcome regression")


def fit_eta(data, weights, gamma, basis_v):
    """Regression of the pseudo-outcome gamma(M, X) on X among control complete rows."""
    w = row_weights(data, weights)
    rows = (data.t == 0) & (data.r == 1)
    pseudo = np.zeros(data.n)
    pseudo[rows] = gamma.predict(data.mx_points[rows])
    return _wls(data.x, pseudo, w, rows, basis_v, "x", _source(weights), "nested regression")


def fit_mu(data, weights, basis_v, t):
    """Arm-``t`` outcome mean given X."""
    w = row_weights(data, weights)
    rows = (data.t == t) & (data.r == 1)
    return _wls(data.x, data.y, w, rows, basis_v, "x", _source(weights), f"arm-{t} mean")


def _propensity_problem(data, w, indicator, basis_v, link):
    complete = data.r == 1
    return SmdProblem(
        offset=w,
        scale=-w * indicator,
        parameter_points=data.x,
        parameter_basis=basis_v,
        conditioning_points=data.x,
        instrument_basis=basis_v,
        link=link,
        subgroup_mask=complete,
    )


def fit_inverse_propensity(data, weights, basis_v, t, link=None, options=None):
    """Inverse of P(T=t | X) from the moment E[delta {1 - I(T=t) e(X)} | R=1, X] = 0."""
    w = row_weights(data, weights)
    indicator = (data.t == t).astype(float)
    if not np.any(indicator[data.r == 1]):
        raise InsufficientDataError(f"no complete rows with T={t}")
    link = link or LinkSpec("inverse_logistic")
    fit = solve_smd(_propensity_problem(data, w, indicator, basis_v, link), options=options)
    return LinearFit.from_weight_fit(fit, "x", _source(weights))


def fit_b1(data, weights, basis_v, link=None, options=None):
    """Inverse control-arm propensity; same solver as the arm-0 inverse propensity."""
    return fit_inverse_propensity(data, weights, basis_v, 0, link, options)


def fit_b2(data, weights, b1, basis_u, options=None):
    """Linear sieve solution of E[delta {(1-T) b1(X) - T b2(M, X)} | R=1, M, X] = 0."""
    w = row_weights(data, weights)
    complete = data.r == 1
    if not np.any(data.t[complete] == 1):
        raise InsufficientDataError("no complete rows with T=1")
    b1_vals = np.zeros(data.n)
    b1_vals[complete] = b1.predict(data.x[complete])
    problem = SmdProblem(
        offset=w * (1 - data.t) * b1_vals,
        scale=-w * data.t,
        parameter_points=data.mx_points,
        parameter_basis=basis_u,
        conditioning_points=data.mx_points,
        instrument_basis=basis_u,
        link=LinkSpec("identity"),
        subgroup_mask=complete,
    )
    fit = solve_smd(problem, options=options)
    return LinearFit.from_weight_fit(fit, "m,x", _source(weights))
