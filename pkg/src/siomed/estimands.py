"""Weighted point estimates of the mediation functional and the arm means."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .nuisance import row_weights

NORMALIZATION_BAND = (0.8, 1.2)


@dataclass(frozen=True)
class PointEstimates:
    """theta = E{Y(1, M(0))}, alpha0/alpha1 = E{Y(t, M(t))} and the derived effects."""

    theta: float
    alpha0: float
    alpha1: float
    nie: float
    nde: float
    ate: float

    def as_dict(self):
        return asdict(self)


def _weighted_mean(data, weights, fit):
    w = row_weights(data, weights)
    obs = data.r == 1
    vals = np.zeros(data.n)
    vals[obs] = fit.predict(data.x[obs])
    return float(np.sum(w * vals) / data.n)


def estimate_theta(data, weights, eta):
    """Average of ``R * delta * eta(X)`` over all rows (missing rows contribute 0)."""
    return _weighted_mean(data, weights, eta)


def estimate_alpha(data, weights, mu, t=None):
    """Average of ``R * delta * mu(t, X)``; ``mu`` is already the arm-``t`` fit."""
    return _weighted_mean(data, weights, mu)


def mediation_effects(theta, alpha0, alpha1):
    theta, alpha0, alpha1 = float(theta), float(alpha0), float(alpha1)
    if not np.all(np.isfinite([theta, alpha0, alpha1])):
        raise ValueError("point estimates must be finite")
    return PointEstimates(theta, alpha0, alpha1, alpha1 - theta, theta - alpha0, alpha1 - alpha0)


def weight_normalization(data, weights, warn=True):
    """Sample mean of ``R * delta``; its population value is 1."""
    ratio = float(np.mean(row_weights(data, weights)))
    lo, hi = NORMALIZATION_BAND
    if warn and not lo <= ratio <= hi:
        warnings.warn(f"weights average to {ratio:.3f}, outside [{lo}, {hi}]", RuntimeWarning, stacklevel=2)
    return ratio
