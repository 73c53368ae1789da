"""Sieve minimum distance estimation.

Every problem here has an affine residual ``offset + scale * f(row)`` where
``f = link(q(row)' pi)`` ranges over a (generalized) linear sieve. The
criterion projects the residual vector onto an instrument basis with series
least squares and averages the squared fitted values:

    crit(pi) = n^-1 sum_i Ehat[offset + scale * f | W_i]^2

With ``linear_term`` set the objective is ``crit / 2 - n^-1 sum_i w_i f_i``,
which is the quadratic-minus-linear form solved by the representers.

Optimization works in whitened coordinates: on the rows where the parameter
matters, the parameter design is replaced by an orthogonal one with unit
root-mean-square columns. This is a reparametrization of the same sieve
space and leaves the minimizer unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dataset
from .basis import LinkSpec, build_basis, discrete_degrees, fit_standardization
from .exceptions import ConvergenceError, InsufficientDataError, InvalidConfigError, NumericalError
from .optim import OptimOptions, bfgs
from .seriesreg import fit_series, ridge_inverse

_RANK_CUTOFF = 1e-10


@dataclass(frozen=True, eq=False)
class SmdProblem:
    """One sieve minimum distance problem.

    Attributes
    ----------
    offset, scale : arrays of shape (n,)
        Residual is ``offset + scale * f``; rows with ``scale == 0`` do not
        depend on the parameter.
    parameter_points, parameter_basis
        Where and how ``f`` is evaluated.
    conditioning_points, instrument_basis
        The conditioning sample W and the basis of the inner projection.
    link : LinkSpec
    arms : array of {0, 1}, optional
        Split both the projection and the parameter by treatment arm.
    linear_term : array of shape (n,), optional
    subgroup_mask : bool array, optional
        Rows outside the mask enter neither the projection nor the average.
    """

    offset: np.ndarray
    scale: np.ndarray
    parameter_points: np.ndarray
    parameter_basis: object
    conditioning_points: np.ndarray
    instrument_basis: object
    link: LinkSpec = field(default_factory=LinkSpec)
    arms: np.ndarray | None = None
    linear_term: np.ndarray | None = None
    subgroup_mask: np.ndarray | None = None

    def __post_init__(self):
        n = np.shape(self.offset)[0]
        if np.shape(self.scale)[0] != n:
            raise ValueError("offset and scale must have the same length")
        if np.shape(self.parameter_points)[0] != n or np.shape(self.conditioning_points)[0] != n:
            raise ValueError("point matrices must have one row per observation")
        if self.instrument_basis.total_terms < self.parameter_basis.total_terms:
            raise InvalidConfigError(
                f"instrument basis has {self.instrument_basis.total_terms} terms, fewer than the "
                f"{self.parameter_basis.total_terms} parameter terms"
            )

    @property
    def n(self):
        return np.shape(self.offset)[0]

    def residual_map(self, f_values):
        """Residuals and their derivative with respect to ``f``."""
        return self.offset + self.scale * f_values, self.scale


@dataclass(frozen=True, eq=False)
class WeightFit:
    """Fitted (generalized) linear sieve function.

    ``coefficients`` maps each arm (``0``/``1``, or ``"pooled"`` when the
    problem is not split) to its coefficient vector.
    """

    coefficients: dict
    link: LinkSpec
    parameter_basis: object
    criterion_value: float
    diagnostics: dict = field(default_factory=dict)

    def predict(self, points, arms=None):
        q = self.parameter_basis.evaluate(points)
        if arms is None:
            return self.link.apply(q @ self.coefficients["pooled"])
        arms = np.asarray(arms).ravel()
        v = np.empty(q.shape[0])
        for a in np.unique(arms):
            sel = arms == a
            v[sel] = q[sel] @ self.coefficients[int(a)]
        return self.link.apply(v)


class _Block:
    """Criterion restricted to one arm (or the pooled sample)."""

    def __init__(self, problem, rows, design, ginv):
        self.rows = rows
        self.n = problem.n
        self.link = problem.link
        # crit = |P ginv P' r|^2 / n = |Z r|^2 / n with Z = C' P', C C' = ginv G ginv;
        # a sum of squares keeps full relative precision near the optimum
        vals, vecs = np.linalg.eigh(ginv @ (design.T @ design) @ ginv)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        self.Z = root.T @ design.T
        scale = np.asarray(problem.scale, dtype=float)[rows]
        self.active = np.flatnonzero(scale != 0)
        self.offset = np.asarray(problem.offset, dtype=float)[rows]
        self.scale_act = scale[self.active]
        self.w_act = None
        if problem.linear_term is not None:
            self.w_act = np.asarray(problem.linear_term, dtype=float)[rows][self.active]
        pts = np.asarray(problem.parameter_points, dtype=float)[rows][self.active]
        self.Q = problem.parameter_basis.evaluate(pts) if self.active.size else np.zeros(
            (0, problem.parameter_basis.total_terms)
        )
        self._whiten()

    def _whiten(self):
        n_act, dim = self.Q.shape
        if n_act == 0:
            self.T = np.zeros((dim, 0))
            self.T_pinv = np.zeros((0, dim))
            return
        _, s, vt = np.linalg.svd(self.Q, full_matrices=False)
        keep = s > _RANK_CUTOFF * s[0]
        root = np.sqrt(n_act)
        self.T = vt[keep].T * (root / s[keep])
        self.T_pinv = (vt[keep].T * (s[keep] / root)).T

    def value_grad(self, pi):
        """Objective contribution and gradient in natural coordinates."""
        with np.errstate(over="ignore", invalid="ignore"):
            return self._value_grad(pi)

    def _value_grad(self, pi):
        v = self.Q @ pi
        f = self.link.apply(v)
        fp = self.link.grad(v)
        r = self.offset.copy()
        r[self.active] += self.scale_act * f
        zr = self.Z @ r
        crit = float(zr @ zr) / self.n
        dcrit = (2.0 / self.n) * (self.Z.T @ zr)[self.active] * self.scale_act * fp
        if self.w_act is None:
            return crit, self.Q.T @ dcrit
        obj = 0.5 * crit - float(self.w_act @ f) / self.n
        return obj, self.Q.T @ (0.5 * dcrit - self.w_act * fp / self.n)

    def gauss_newton_inverse(self, beta):
        """Inverse Gauss-Newton curvature in whitened coordinates (BFGS seed)."""
        with np.errstate(over="ignore", invalid="ignore"):
            v = self.Q @ (self.T @ beta)
            jac = (self.Z[:, self.active] * (self.scale_act * self.link.grad(v))) @ (self.Q @ self.T)
            hess = (2.0 / self.n) * jac.T @ jac
        if self.w_act is not None:
            hess = 0.5 * hess
        if not np.all(np.isfinite(hess)):
            return None
        vals, vecs = np.linalg.eigh(hess)
        floor = max(vals.max(), 1e-300) * 1e-10
        return (vecs / np.maximum(vals, floor)) @ vecs.T

    def value_grad_white(self, beta):
        val, g = self.value_grad(self.T @ beta)
        with np.errstate(over="ignore", invalid="ignore"):
            return val, self.T.T @ g

    def closed_form(self):
        """Exact minimizer (in whitened coordinates) for the identity link."""
        wd = self.Q @ self.T
        ab = (self.Z[:, self.active] * self.scale_act) @ wd
        lhs = ab.T @ ab
        rhs = -ab.T @ (self.Z @ self.offset)
        if self.w_act is not None:
            rhs = rhs + wd.T @ self.w_act
        vals, vecs = np.linalg.eigh(lhs)
        if vals.size and vals.min() > 1e-12 * vals.max():
            return vecs @ ((vecs.T @ rhs) / vals)
        return ridge_inverse(lhs) @ rhs


def _blocks(problem):
    n = problem.n
    mask = np.ones(n, dtype=bool) if problem.subgroup_mask is None else np.asarray(problem.subgroup_mask, bool)
    proj = fit_series(np.zeros(n), problem.conditioning_points, problem.instrument_basis, problem.arms, mask)
    return {arm: _Block(problem, proj.rows[arm], proj.design[arm], proj.gram_inverse[arm]) for arm in proj.rows}


def _split_coefficients(problem, coefficients):
    if isinstance(coefficients, dict):
        return coefficients
    coefficients = np.asarray(coefficients, dtype=float)
    if problem.arms is None:
        return {"pooled": coefficients}
    dim = problem.parameter_basis.total_terms
    return {0: coefficients[:dim], 1: coefficients[dim:]}


def smd_objective(problem, coefficients):
    """Empirical criterion at ``coefficients`` (a dict by arm or a flat vector)."""
    coefs = _split_coefficients(problem, coefficients)
    return sum(b.value_grad(coefs[a])[0] for a, b in _blocks(problem).items())


def smd_gradient(problem, coefficients):
    """Analytic gradient of the empirical criterion.

    Returns a dict keyed like the coefficients, or a flat vector (arm 0 then
    arm 1) when a flat vector was passed in.
    """
    flat = not isinstance(coefficients, dict)
    coefs = _split_coefficients(problem, coefficients)
    blocks = _blocks(problem)
    grads = {a: blocks[a].value_grad(coefs[a])[1] if a in blocks else np.zeros_like(coefs[a]) for a in coefs}
    if not flat:
        return grads
    return np.concatenate([grads[a] for a in sorted(grads, key=str)])


def _solve_block(block, key, init, options):
    dim = block.T.shape[0]
    if block.active.size == 0:
        raise InsufficientDataError(f"no rows inform the parameter in arm {key!r}")
    if block.link.is_linear and options.method != "bfgs":
        beta = block.closed_form()
        val, g = block.value_grad_white(beta)
        diag = {"iterations": 0, "grad_norm": float(np.max(np.abs(g), initial=0.0)), "restarts_used": 0,
                "converged_starts": 1, "method": "closed_form"}
        return block.T @ beta, val, diag
    rng = np.random.default_rng([options.seed, 0 if key == "pooled" else int(key) + 1])
    starts = [np.zeros(block.T.shape[1]) if init is None else block.T_pinv @ np.asarray(init, float)]
    starts += [rng.normal(0.0, options.init_scale, block.T.shape[1]) for _ in range(options.restarts)]
    results = []
    for x0 in starts:
        res = bfgs(block.value_grad_white, x0, gtol=options.gtol, max_iter=options.max_iter,
                   h0=block.gauss_newton_inverse(x0))
        if not np.isfinite(res.fun):
            raise NumericalError(f"objective is not finite in arm {key!r}")
        results.append(res)
    ok = [r for r in results if r.converged]
    pool = ok if ok else results
    best_val = min(r.fun for r in pool)
    tied = [r for r in pool if r.fun <= best_val + 1e-12 * max(1.0, abs(best_val))]
    best = min(tied, key=lambda r: np.linalg.norm(block.T @ r.x))
    diag = {
        "iterations": int(sum(r.n_iter for r in results)),
        "grad_norm": best.grad_norm,
        "restarts_used": len(starts) - 1,
        "converged_starts": len(ok),
        "method": "bfgs",
        "start_values": [float(block.value_grad_white(x0)[0]) for x0 in starts],
    }
    if dim and not ok:
        diag["converged"] = False
    return block.T @ best.x, float(best.fun), diag


def solve_smd(problem, init=None, options=None):
    """Minimize the empirical criterion of ``problem``.

    Parameters
    ----------
    problem : SmdProblem
    init : dict or array, optional
        Starting coefficients; the zero vector when omitted.
    options : OptimOptions, optional

    Returns
    -------
    WeightFit

    Raises
    ------
    ConvergenceError
        No start reached the gradient tolerance in some arm. ``best`` holds
        the lowest-criterion fit found.
    """
    options = options or OptimOptions()
    init = _split_coefficients(problem, init) if init is not None else {}
    coefs, diags, total = {}, {}, 0.0
    failed = []
    for key, block in _blocks(problem).items():
        pi, val, diag = _solve_block(block, key, init.get(key), options)
        coefs[key] = pi
        diags[key] = diag
        total += val
        if diag.get("converged") is False:
            failed.append(key)
    fit = WeightFit(coefs, problem.link, problem.parameter_basis, total, diags)
    if failed:
        raise ConvergenceError(
            f"no start reached gradient tolerance {options.gtol:g} in arm(s) {failed}", best=fit
        )
    return fit


def evaluate_weight(fit, t, m, y, x):
    """Fitted weight ``link(q(m, y, x)' pi_t)``; scalar in, scalar out."""
    scalar = np.ndim(m) == 0
    m, y = np.atleast_1d(m).astype(float), np.atleast_1d(y).astype(float)
    x = np.asarray(x, dtype=float).reshape(m.shape[0], -1)
    pts = np.column_stack([m, y, x])
    arms = None if "pooled" in fit.coefficients else np.broadcast_to(np.asarray(t), m.shape)
    out = fit.predict(pts, arms)
    return float(out[0]) if scalar else out


def default_weight_bases(data, degree=3, instrument_degree=None, family="polynomial", truncation="total"):
    """Parameter basis on (M, Y, X) and instrument basis on (M, Y, Z, observed X).

    Standardization uses the complete cases for the parameter basis and the
    whole sample for the instrument basis.
    """
    complete = data.r == 1
    wp = data.weight_points
    q = build_basis(family, discrete_degrees(wp[complete], degree), wp.shape[1], truncation)
    q = fit_standardization(q, wp[complete])
    cp = data.conditioning_points
    ideg = degree if instrument_degree is None else instrument_degree
    p = build_basis(family, discrete_degrees(cp, ideg), cp.shape[1], truncation)
    p = fit_standardization(p, cp)
    return q, p


def delta_problem(data, parameter_basis, instrument_basis, link=None):
    """Problem whose solution estimates the inverse response probability.

    Residual ``R * delta - 1`` projected on (T, M, Y, Z, observed X).
    """
    return SmdProblem(
        offset=-np.ones(data.n),
        scale=data.r.copy(),
        parameter_points=data.weight_points,
        parameter_basis=parameter_basis,
        conditioning_points=data.conditioning_points,
        instrument_basis=instrument_basis,
        link=link or LinkSpec(),
        arms=data.t,
    )


def fit_delta(data, parameter_basis=None, instrument_basis=None, link=None, options=None, degree=1):
    """Estimate the inverse response probability on a generalized linear sieve."""
    check_dataset(data)
    if parameter_basis is None or instrument_basis is None:
        q, p = default_weight_bases(data, degree)
        parameter_basis = parameter_basis or q
        instrument_basis = instrument_basis or p
    return solve_smd(delta_problem(data, parameter_basis, instrument_basis, link), options=options)


def weight_values(fit, data):
    """``R_i * delta_hat_i``; zero for incomplete rows."""
    out = np.zeros(data.n)
    obs = data.r == 1
    if obs.any():
        out[obs] = fit.predict(data.weight_points[obs], data.t[obs])
    return out


class ShadowWeightEstimator(BaseEstimator):
    """Scikit-learn style estimator of the inverse response probability.

    Parameters
    ----------
    degree : int, default=1
        Degree cap of the parameter basis on (M, Y, X).
    instrument_degree : int, optional
        Degree cap of the instrument basis; defaults to ``degree``.
    family, truncation : str
    link : str, default="inverse_logistic"
    gtol, max_iter, restarts, seed
        Optimizer settings.
    """

    def __init__(self, degree=1, instrument_degree=None, family="polynomial", truncation="total",
                 link="inverse_logistic", gtol=1e-8, max_iter=500, restarts=3, seed=0):
        self.degree = degree
        self.instrument_degree = instrument_degree
        self.family = family
        self.truncation = truncation
        self.link = link
        self.gtol = gtol
        self.max_iter = max_iter
        self.restarts = restarts
        self.seed = seed

    def fit(self, data, y=None):
        check_dataset(data)
        q, p = default_weight_bases(data, self.degree, self.instrument_degree, self.family, self.truncation)
        opts = OptimOptions(gtol=self.gtol, max_iter=self.max_iter, restarts=self.restarts, seed=self.seed)
        self.fit_ = solve_smd(delta_problem(data, q, p, LinkSpec(self.link)), options=opts)
        self.criterion_ = self.fit_.criterion_value
        return self

    def predict(self, data):
        """Weight at each row; NaN where covariates are missing."""
        check_is_fitted(self, "fit_")
        out = np.full(data.n, np.nan)
        obs = data.r == 1
        out[obs] = self.fit_.predict(data.weight_points[obs], data.t[obs])
        return out
