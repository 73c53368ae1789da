"""End-to-end estimation: weight, nuisances, point estimates, inference."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_choice, check_dataset, check_positive_int
from .basis import LinkSpec
from .config import SieveConfig
from .estimands import estimate_alpha, estimate_theta, mediation_effects, weight_normalization
from .inference import (
    InferenceReport,
    KappaComponents,
    bootstrap_ci,
    chi_values,
    fit_representer,
    influence_and_variance,
    kappa_values,
    representer_projection,
)
from .nuisance import (
    covariate_basis,
    fit_b1,
    fit_b2,
    fit_eta,
    fit_gamma,
    fit_inverse_propensity,
    fit_mu,
    mediator_basis,
    row_weights,
)
from .optim import OptimOptions
from .smd import default_weight_bases, delta_problem, solve_smd


@dataclass(eq=False)
class PipelineResult:
    estimates: object
    weights: np.ndarray
    delta_fit: object = None
    fits: dict = field(default_factory=dict)
    influence: object = None
    report: InferenceReport = None
    normalization: float = float("nan")
    bases: dict = field(default_factory=dict)


def _bases(data, cfg):
    q, p = default_weight_bases(data, cfg.weight_degree, cfg.instrument_degree, cfg.family, cfg.truncation)
    u = mediator_basis(data, cfg.outcome_degree, cfg.family, cfg.truncation)
    v = covariate_basis(data, cfg.covariate_degree, cfg.family, cfg.truncation)
    return {"q": q, "p": p, "u": u, "v": v}


def fit_weight(data, cfg, bases=None):
    """Fit the inverse response probability under ``cfg``."""
    bases = bases or _bases(data, cfg)
    problem = delta_problem(data, bases["q"], bases["p"], LinkSpec(cfg.weight_link))
    return solve_smd(problem, options=cfg.optim)


def point_estimates(data, cfg=None, weights=None):
    """theta, alpha0, alpha1 and the effects from the outcome regressions alone.

    ``weights=None`` gives the complete-data estimator (unit weights on the
    complete rows).
    """
    cfg = cfg or SieveConfig()
    u = mediator_basis(data, cfg.outcome_degree, cfg.family, cfg.truncation)
    v = covariate_basis(data, cfg.covariate_degree, cfg.family, cfg.truncation)
    gamma = fit_gamma(data, weights, u)
    eta = fit_eta(data, weights, gamma, v)
    mu0 = fit_mu(data, weights, v, 0)
    mu1 = fit_mu(data, weights, v, 1)
    return mediation_effects(
        estimate_theta(data, weights, eta),
        estimate_alpha(data, weights, mu0, 0),
        estimate_alpha(data, weights, mu1, 1),
    )


def run_pipeline(data, cfg=None, unit_weights=False, inference=True):
    """Fit every component and, optionally, the plug-in inference.

    Parameters
    ----------
    data : Dataset
    cfg : SieveConfig
    unit_weights : bool
        Skip the weight fit and use delta = 1 on the complete rows.
    inference : bool
        Also fit b1, b2, the inverse propensities and the representers.
    """
    check_dataset(data)
    cfg = cfg or SieveConfig()
    bases = _bases(data, cfg)
    delta_fit = None if unit_weights else fit_weight(data, cfg, bases)
    w = row_weights(data, delta_fit)
    fits = {}
    fits["gamma"] = fit_gamma(data, w, bases["u"])
    fits["eta"] = fit_eta(data, w, fits["gamma"], bases["v"])
    fits["mu0"] = fit_mu(data, w, bases["v"], 0)
    fits["mu1"] = fit_mu(data, w, bases["v"], 1)
    est = mediation_effects(
        estimate_theta(data, w, fits["eta"]),
        estimate_alpha(data, w, fits["mu0"], 0),
        estimate_alpha(data, w, fits["mu1"], 1),
    )
    result = PipelineResult(est, w, delta_fit, fits, normalization=weight_normalization(data, w), bases=bases)
    if not inference:
        return result
    plink = LinkSpec(cfg.propensity_link)
    fits["b1"] = fit_b1(data, w, bases["v"], plink, cfg.optim)
    fits["b2"] = fit_b2(data, w, fits["b1"], bases["u"], cfg.optim)
    fits["e1"] = fit_inverse_propensity(data, w, bases["v"], 1, plink, cfg.optim)
    comps = KappaComponents(fits["b1"], fits["b2"], fits["gamma"], fits["eta"])
    kappa = kappa_values(data, comps)
    chi0 = chi_values(data, fits["b1"], fits["mu0"], 0)
    chi1 = chi_values(data, fits["e1"], fits["mu1"], 1)
    nus = []
    for name, vals in (("rho", kappa), ("varsigma0", chi0), ("varsigma1", chi1)):
        fits[name] = fit_representer(data, data.r * vals, bases["q"], bases["p"])
        nus.append(representer_projection(data, fits[name], bases["p"]))
    infl, report = influence_and_variance(data, w, est, kappa, chi0, chi1, *nus)
    report.diagnostics["weight_normalization"] = result.normalization
    if delta_fit is not None:
        report.diagnostics["weight_fit"] = {
            "criterion": delta_fit.criterion_value,
            "arms": {str(k): v for k, v in delta_fit.diagnostics.items()},
        }
    result.influence = infl
    result.report = report
    result.fits["kappa_components"] = comps
    result.fits["kappa"] = kappa
    return result


class SIOMediation(BaseEstimator):
    """Mediation effects with a nonignorably missing confounder and a shadow variable.

    Parameters
    ----------
    weight_degree, instrument_degree, outcome_degree, covariate_degree : int
        Sieve degrees; see :class:`~siomed.config.SieveConfig`.
    family, truncation : str
    weight_link, propensity_link : str
    gtol, max_iter, restarts : optimizer settings
    seed : int
        Seeds the optimizer restarts and the bootstrap.
    inference : {"plugin", "bootstrap"}
    n_boot : int
        Bootstrap resamples when ``inference="bootstrap"``.
    unit_weights : bool
        Treat every complete row as having weight 1 (complete-data pipeline).

    Attributes
    ----------
    estimates_ : PointEstimates
    report_ : InferenceReport
    result_ : PipelineResult
    """

    def __init__(self, weight_degree=1, instrument_degree=1, outcome_degree=3, covariate_degree=3,
                 family="polynomial", truncation="total", weight_link="inverse_logistic",
                 propensity_link="inverse_logistic", gtol=1e-8, max_iter=500, restarts=3, seed=0,
                 inference="plugin", n_boot=200, unit_weights=False):
        self.weight_degree = weight_degree
        self.instrument_degree = instrument_degree
        self.outcome_degree = outcome_degree
        self.covariate_degree = covariate_degree
        self.family = family
        self.truncation = truncation
        self.weight_link = weight_link
        self.propensity_link = propensity_link
        self.gtol = gtol
        self.max_iter = max_iter
        self.restarts = restarts
        self.seed = seed
        self.inference = inference
        self.n_boot = n_boot
        self.unit_weights = unit_weights

    def sieve_config(self):
        return SieveConfig(
            family=self.family,
            truncation=self.truncation,
            weight_degree=self.weight_degree,
            instrument_degree=self.instrument_degree,
            outcome_degree=self.outcome_degree,
            covariate_degree=self.covariate_degree,
            weight_link=self.weight_link,
            propensity_link=self.propensity_link,
            optim=OptimOptions(gtol=self.gtol, max_iter=self.max_iter, restarts=self.restarts, seed=self.seed),
        )

    @classmethod
    def from_config(cls, cfg, **kwargs):
        o = cfg.optim
        return cls(weight_degree=cfg.weight_degree, instrument_degree=cfg.instrument_degree,
                   outcome_degree=cfg.outcome_degree, covariate_degree=cfg.covariate_degree,
                   family=cfg.family, truncation=cfg.truncation, weight_link=cfg.weight_link,
                   propensity_link=cfg.propensity_link, gtol=o.gtol, max_iter=o.max_iter,
                   restarts=o.restarts, seed=o.seed, **kwargs)

    def fit(self, data, y=None):
        check_dataset(data)
        check_choice(self.inference, ("plugin", "bootstrap"), "inference")
        cfg = self.sieve_config()
        result = run_pipeline(data, cfg, unit_weights=self.unit_weights, inference=self.inference == "plugin")
        if self.inference == "bootstrap":
            check_positive_int(self.n_boot, "n_boot")
            unit = self.unit_weights

            def pipeline(sample):
                return run_pipeline(sample, cfg, unit_weights=unit, inference=False).estimates

            result.report = bootstrap_ci(data, pipeline, self.n_boot, self.seed, point=result.estimates)
            result.report.diagnostics["weight_normalization"] = result.normalization
        self.result_ = result
        self.estimates_ = result.estimates
        self.report_ = result.report
        self.n_obs_ = data.n
        return self

    def summary(self):
        """Report as a data frame (estimand, point, se, ci_low, ci_high, ...)."""
        check_is_fitted(self, "report_")
        return self.report_.to_frame()
