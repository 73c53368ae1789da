"""Simulation designs with known truth.

Two designs share the covariate and missingness structure. The shadow
variable is ``Z = Phi(e1)`` and the missable covariate is
``X1 = Phi(omega * e1 + sqrt(1 - omega^2) * e2)``, so ``omega`` controls how
strongly Z predicts X1 without changing either marginal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .data import Dataset
from .exceptions import InvalidConfigError


@dataclass(frozen=True)
class DgpConfig:
    dgp_id: int = 1
    n: int = 1000
    omega: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.dgp_id not in (1, 2):
            raise InvalidConfigError(f"dgp_id must be 1 or 2, got {self.dgp_id!r}")
        if not 0.0 <= self.omega <= 1.0:
            raise InvalidConfigError("omega must lie in [0, 1]")
        if self.n < 1:
            raise InvalidConfigError("n must be positive")


@dataclass(frozen=True, eq=False)
class LatentTruth:
    """Everything the analyst does not see."""

    x_full: np.ndarray
    eps: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    delta: np.ndarray
    propensity: np.ndarray
    dgp_id: int


def _propensity_index(dgp_id, x1, x2, x3):
    if dgp_id == 1:
        return -0.1 + x1 - x2 + 0.2 * x3
    return 0.1 + x1**2 - x2 + 0.2 * x3


def _mediator_mean(dgp_id, x1, x2, x3, t):
    if dgp_id == 1:
        return -1 + 3 * x1 - 2 * x2 + x3 + t
    return -1 + 4 * x1**2 - np.sin(x2) + x3 + t


def _outcome_mean(dgp_id, x1, x2, x3, t, m):
    if dgp_id == 1:
        base = 1 + 3 * x1 - 3 * x2 + x3
    else:
        base = -1 + 5 * np.sin(x1) - 2 * x2**2 + x3
    return base + t - 1.5 * m + 3 * t * m


def _response_index(x1, x2, x3, t, e3, e4):
    return -1 + 3 * x1 + x2 - x3 - 0.5 * t * e3 + 0.1 * e4


def draw_latent(dgp_id, n, omega, rng):
    """Full-data draw: covariates, noise, treatment and both potential mediators."""
    eps = rng.standard_normal((n, 4))
    z = ndtr(eps[:, 0])
    x1 = ndtr(omega * eps[:, 0] + np.sqrt(1.0 - omega**2) * eps[:, 1])
    x2 = rng.uniform(0.0, 1.0, n)
    x3 = rng.binomial(1, 0.5, n).astype(float)
    ps = expit(_propensity_index(dgp_id, x1, x2, x3))
    t = rng.binomial(1, ps).astype(float)
    m0 = _mediator_mean(dgp_id, x1, x2, x3, 0.0) + eps[:, 2]
    m1 = _mediator_mean(dgp_id, x1, x2, x3, 1.0) + eps[:, 2]
    return eps, z, np.column_stack([x1, x2, x3]), ps, t, m0, m1


def generate(config):
    """Draw one observed sample and its latent truth.

    Returns
    -------
    (Dataset, LatentTruth)
    """
    rng = np.random.default_rng(config.seed)
    eps, z, x, ps, t, m0, m1 = draw_latent(config.dgp_id, config.n, config.omega, rng)
    x1, x2, x3 = x.T
    m = np.where(t == 1, m1, m0)
    y = _outcome_mean(config.dgp_id, x1, x2, x3, t, m) + eps[:, 3]
    resp = expit(_response_index(x1, x2, x3, t, eps[:, 2], eps[:, 3]))
    r = rng.binomial(1, resp).astype(float)
    data = Dataset.build(r, t, m, y, x, z, missable=[True, False, False], x_names=("x1", "x2", "x3"))
    latent = LatentTruth(x, eps, m0, m1, 1.0 / resp, ps, config.dgp_id)
    return data, latent


def true_delta(dgp_id, t, m, y, x):
    """Inverse response probability as a function of observables and the true X."""
    x = np.atleast_2d(x)
    x1, x2, x3 = x.T
    e3 = m - _mediator_mean(dgp_id, x1, x2, x3, t)
    e4 = y - _outcome_mean(dgp_id, x1, x2, x3, t, m)
    return 1.0 + np.exp(-_response_index(x1, x2, x3, t, e3, e4))


def true_gamma(dgp_id, m, x):
    """E(Y | T=1, M=m, X*=x)."""
    x1, x2, x3 = np.atleast_2d(x).T
    return _outcome_mean(dgp_id, x1, x2, x3, 1.0, m)


def true_mu(dgp_id, t, x):
    """E(Y | T=t, X*=x)."""
    x1, x2, x3 = np.atleast_2d(x).T
    return _outcome_mean(dgp_id, x1, x2, x3, t, _mediator_mean(dgp_id, x1, x2, x3, t))


def true_eta(dgp_id, x):
    """E{gamma(M, X*) | T=0, X*=x}; gamma is linear in m so the mean passes inside."""
    x1, x2, x3 = np.atleast_2d(x).T
    return true_gamma(dgp_id, _mediator_mean(dgp_id, x1, x2, x3, 0.0), x)


def true_propensity(dgp_id, x):
    """P(T=1 | X*=x)."""
    x1, x2, x3 = np.atleast_2d(x).T
    return expit(_propensity_index(dgp_id, x1, x2, x3))


def true_b1(dgp_id, x):
    return 1.0 / (1.0 - true_propensity(dgp_id, x))


def true_b2(dgp_id, m, x):
    """f(m | T=0, x) / {P(T=1 | x) f(m | T=1, x)} with unit-variance Gaussian mediator noise."""
    x1, x2, x3 = np.atleast_2d(x).T
    a0 = m - _mediator_mean(dgp_id, x1, x2, x3, 0.0)
    a1 = m - _mediator_mean(dgp_id, x1, x2, x3, 1.0)
    return np.exp(-0.5 * a0**2 + 0.5 * a1**2) / true_propensity(dgp_id, x)
