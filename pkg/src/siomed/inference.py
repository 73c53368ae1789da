"""Influence functions, plug-in standard errors and the pairs bootstrap.

The influence function of the weighted estimate of theta is

    psi_i = R_i delta_i kappa_i - theta + nu_i (1 - R_i delta_i)

where ``kappa`` is the complete-data efficient influence function plus theta
and ``nu = E{R rho | T, M, Y, Z}`` projects the representer ``rho``. The arm
means have the same structure with ``chi`` in place of ``kappa``.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .basis import LinkSpec
from .estimands import PointEstimates
from .exceptions import BootstrapUnstableError, SiomedError
from .nuisance import LinearFit, row_weights
from .seriesreg import fit_series
from .smd import SmdProblem, solve_smd

Z_95 = 1.959963984540054
ESTIMANDS = ("theta", "alpha0", "alpha1", "nie", "nde", "ate")
MIN_BOOTSTRAP = 50
MAX_FAILURE_SHARE = 0.10


@dataclass(frozen=True, eq=False)
class KappaComponents:
    b1_fit: LinearFit
    b2_fit: LinearFit
    gamma_fit: LinearFit
    eta_fit: LinearFit


@dataclass(frozen=True, eq=False)
class InfluenceVectors:
    """Per-row influence values; ``representer_projection`` is ``nu`` for theta."""

    psi: np.ndarray
    phi0: np.ndarray
    phi1: np.ndarray
    representer_projection: np.ndarray
    arm_projections: tuple = ()


@dataclass(frozen=True)
class EstimandRow:
    estimand: str
    point: float
    se: float
    ci_low: float
    ci_high: float
    method: str


@dataclass
class InferenceReport:
    """Point estimates with standard errors and 95% intervals.

    ``se`` is the standard error of the estimate, i.e. the influence-function
    standard deviation divided by ``sqrt(n)``.
    """

    rows: list
    n: int
    diagnostics: dict = field(default_factory=dict)

    def row(self, estimand):
        for r in self.rows:
            if r.estimand == estimand:
                return r
        raise KeyError(estimand)

    def to_frame(self):
        diag = json.dumps(_jsonable(self.diagnostics), sort_keys=True)
        return pd.DataFrame(
            [
                {
                    "estimand": r.estimand,
                    "point": r.point,
                    "se": r.se,
                    "ci_low": r.ci_low,
                    "ci_high": r.ci_high,
                    "method": r.method,
                    "n": self.n,
                    "diagnostics": diag,
                }
                for r in self.rows
            ]
        )

    def as_dict(self):
        return {
            "n": self.n,
            "estimates": [r.__dict__ for r in self.rows],
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def kappa_values(data, comps):
    """kappa at each complete row; 0 where covariates are missing."""
    out = np.zeros(data.n)
    obs = data.r == 1
    x = data.x[obs]
    mx = data.mx_points[obs]
    t = data.t[obs]
    eta = comps.eta_fit.predict(x)
    gamma = comps.gamma_fit.predict(mx)
    out[obs] = (
        eta
        + comps.b1_fit.predict(x) * (1 - t) * (gamma - eta)
        + comps.b2_fit.predict(mx) * t * (data.y[obs] - gamma)
    )
    return out


def kappa_at(comps, t, m, y, x):
    """kappa at arbitrary (t, m, y, x), e.g. at the latent covariates."""
    x = np.atleast_2d(x)
    mx = np.column_stack([m, x])
    eta = comps.eta_fit.predict(x)
    gamma = comps.gamma_fit.predict(mx)
    return eta + comps.b1_fit.predict(x) * (1 - t) * (gamma - eta) + comps.b2_fit.predict(mx) * t * (y - gamma)


def chi_values(data, inv_propensity_fit, mu_fit, t):
    """chi^(t) at each complete row; 0 where covariates are missing."""
    out = np.zeros(data.n)
    obs = data.r == 1
    x = data.x[obs]
    mu = mu_fit.predict(x)
    hit = (data.t[obs] == t).astype(float)
    out[obs] = hit * inv_propensity_fit.predict(x) * (data.y[obs] - mu) + mu
    return out


def fit_representer(data, target_values, parameter_basis, instrument_basis):
    """Closed-form minimizer of ``crit/2 - mean(target * rho)`` over the linear span.

    ``target_values`` is ``R * kappa`` (or ``R * chi``). The criterion projects
    ``R * rho`` on the instrument basis within each treatment arm.
    """
    problem = SmdProblem(
        offset=np.zeros(data.n),
        scale=data.r.astype(float),
        parameter_points=data.weight_points,
        parameter_basis=parameter_basis,
        conditioning_points=data.conditioning_points,
        instrument_basis=instrument_basis,
        link=LinkSpec("identity"),
        arms=data.t,
        linear_term=np.asarray(target_values, dtype=float),
    )
    fit = solve_smd(problem)
    return LinearFit.from_weight_fit(fit, "t,m,y,x", "representer")


def representer_projection(data, rho, instrument_basis):
    """``E{R rho | T, M, Y, Z}`` at every row, by arm-split series regression."""
    vals = np.zeros(data.n)
    obs = data.r == 1
    vals[obs] = rho.predict(data.weight_points[obs], data.t[obs])
    proj = fit_series(vals, data.conditioning_points, instrument_basis, data.t)
    return proj.predict(data.conditioning_points, data.t)


def _row(name, point, infl, n, method="plugin"):
    sigma = math.sqrt(float(np.mean(infl**2)))
    se = sigma / math.sqrt(n)
    return EstimandRow(name, float(point), se, point - Z_95 * se, point + Z_95 * se, method), sigma


def influence_and_variance(data, weights, estimates, kappa, chi0, chi1, nu, nu0, nu1):
    """Influence vectors and the plug-in report for all six estimands.

    Parameters
    ----------
    weights : WeightFit, array or None
        The weights used for the point estimates.
    estimates : PointEstimates
    kappa, chi0, chi1 : arrays
        Row values from :func:`kappa_values` and :func:`chi_values`.
    nu, nu0, nu1 : arrays
        Representer projections for theta and the two arm means.
    """
    w = row_weights(data, weights)
    n = data.n
    psi = w * kappa - estimates.theta + nu * (1 - w)
    phi0 = w * chi0 - estimates.alpha0 + nu0 * (1 - w)
    phi1 = w * chi1 - estimates.alpha1 + nu1 * (1 - w)
    pairs = {
        "theta": (estimates.theta, psi),
        "alpha0": (estimates.alpha0, phi0),
        "alpha1": (estimates.alpha1, phi1),
        "nie": (estimates.nie, phi1 - psi),
        "nde": (estimates.nde, psi - phi0),
        "ate": (estimates.ate, phi1 - phi0),
    }
    rows, sigmas = [], {}
    for name, (point, infl) in pairs.items():
        row, sigmas[name] = _row(name, point, infl, n)
        rows.append(row)
    degenerate = [k for k, s in sigmas.items() if s == 0.0]
    diag = {"sigma": sigmas, "psi_mean": float(np.mean(psi))}
    if degenerate:
        diag["degenerate"] = degenerate
    infl = InfluenceVectors(psi, phi0, phi1, nu, (nu0, nu1))
    return infl, InferenceReport(rows, n, diag)


def _resample_estimate(data, pipeline, seq):
    rng = np.random.default_rng(seq)
    rows = rng.integers(0, data.n, data.n)
    try:
        return pipeline(data.subset(rows))
    except (SiomedError, np.linalg.LinAlgError):
        return None


def bootstrap_ci(data, pipeline, n_boot=200, seed=0, threads=1, point=None):
    """Pairs bootstrap of a point-estimate pipeline.

    Parameters
    ----------
    pipeline : callable
        Maps a :class:`~siomed.data.Dataset` to :class:`PointEstimates`.
    n_boot : int
        Number of resamples; fewer than 50 is allowed but flagged.
    seed : int
        Each resample draws from its own stream spawned from this seed, so
        the report does not depend on ``threads``.
    point : PointEstimates, optional
        Full-sample estimates; computed with ``pipeline`` when omitted.

    Returns
    -------
    InferenceReport
        Normal-approximation intervals in ``ci_low``/``ci_high``; percentile
        intervals under ``diagnostics["percentile_ci"]``.

    Raises
    ------
    BootstrapUnstableError
        More than 10% of resamples failed.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be positive")
    point = point if point is not None else pipeline(data)
    seqs = np.random.SeedSequence(seed).spawn(n_boot)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            draws = list(pool.map(lambda s: _resample_estimate(data, pipeline, s), seqs))
    else:
        draws = [_resample_estimate(data, pipeline, s) for s in seqs]
    ok = [d for d in draws if d is not None]
    failures = n_boot - len(ok)
    if failures > MAX_FAILURE_SHARE * n_boot:
        raise BootstrapUnstableError(f"{failures} of {n_boot} bootstrap resamples failed")
    table = np.array([[getattr(d, k) for k in ESTIMANDS] for d in ok])
    rows, pct = [], {}
    for j, name in enumerate(ESTIMANDS):
        est = getattr(point, name)
        se = float(np.std(table[:, j], ddof=1)) if len(ok) > 1 else 0.0
        rows.append(EstimandRow(name, est, se, est - Z_95 * se, est + Z_95 * se, "bootstrap"))
        pct[name] = [float(np.quantile(table[:, j], 0.025)), float(np.quantile(table[:, j], 0.975))]
    diag = {"n_boot": n_boot, "failures": failures, "percentile_ci": pct, "seed": seed}
    if n_boot < MIN_BOOTSTRAP:
        diag["below_recommended_resamples"] = True
    if any(r.se == 0.0 for r in rows):
        diag["degenerate"] = [r.estimand for r in rows if r.se == 0.0]
    return InferenceReport(rows, data.n, diag)


def efficiency_loss_diagnostic(data, latent, comps, nu, theta):
    """Plug-in estimate of ``E[(delta0 - 1)(kappa - nu)^2]`` and the full-data variance.

    Needs the latent covariates and true inverse response probabilities, so
    it only runs on simulated data.

    Returns
    -------
    dict with ``loss``, ``loss_se``, ``sigma2_full`` and ``sigma2_full_se``.
    """
    if latent is None:
        raise ValueError("the efficiency-loss diagnostic needs the latent simulation truth")
    kappa = kappa_at(comps, data.t, data.m, data.y, latent.x_full)
    terms = (latent.delta - 1.0) * (kappa - nu) ** 2
    full = (kappa - theta) ** 2
    root = math.sqrt(data.n)
    return {
        "loss": float(np.mean(terms)),
        "loss_se": float(np.std(terms, ddof=1) / root),
        "sigma2_full": float(np.mean(full)),
        "sigma2_full_se": float(np.std(full, ddof=1) / root),
    }


def estimates_from_mapping(values):
    return PointEstimates(**{k: float(values[k]) for k in ESTIMANDS})
