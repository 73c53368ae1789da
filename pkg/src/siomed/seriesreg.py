"""Series least squares estimates of conditional expectations.

``fit_series`` regresses a response on a sieve basis, optionally separately
within each treatment arm and restricted to a subgroup (for example the
complete cases). Every Gram matrix gets the same small ridge
``1e-8 * trace(G) / dim`` and is inverted through a Cholesky factor, with an
eigen pseudo-inverse as the fallback. Two steps of iterative refinement
against the unridged Gram matrix then remove the ridge bias in
well-conditioned directions; near-singular directions stay ridge-damped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from .basis import build_basis, discrete_degrees, fit_standardization
from .exceptions import InsufficientDataError, SingularDesignError

RIDGE = 1e-8
PINV_CUTOFF = 1e-10
REFINE_STEPS = 2


def ridge_inverse(gram, refine=REFINE_STEPS):
    """Stabilized inverse of ``gram`` under the package-wide ridge policy.

    With ``R = (gram + eps*I)^-1`` the result is
    ``sum_{j=0..refine} (I - R gram)^j R``, which shrinks the ridge error by
    ``(eps / (lambda + eps))^(refine + 1)`` along each eigenvalue ``lambda``.
    """
    gram = np.asarray(gram, dtype=float)
    dim = gram.shape[0]
    if not np.all(np.isfinite(gram)):
        raise SingularDesignError("Gram matrix has non-finite entries")
    eps = RIDGE * np.trace(gram) / dim
    if eps <= 0:
        raise SingularDesignError("Gram matrix has zero trace")
    base = _ridged_inverse(gram + eps * np.eye(dim))
    out = base
    term = base
    for _ in range(refine):
        term = term - base @ (gram @ term)
        out = out + term
    return (out + out.T) / 2


def _ridged_inverse(ridged):
    try:
        factor = linalg.cho_factor(ridged, lower=True, check_finite=False)
        return linalg.cho_solve(factor, np.eye(ridged.shape[0]), check_finite=False)
    except linalg.LinAlgError:
        pass
    vals, vecs = linalg.eigh(ridged)
    top = vals.max()
    if top <= 0:
        raise SingularDesignError("Gram matrix has no positive eigenvalue")
    keep = vals > PINV_CUTOFF * top
    return (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T


def weighted_least_squares(design, response, weights=None):
    """Coefficients minimizing sum_i w_i (response_i - design_i' c)^2."""
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    w = np.ones(design.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    wd = design * w[:, None]
    ginv = ridge_inverse(wd.T @ design)
    return ginv @ (wd.T @ response), ginv


def condition_number(design, weights=None):
    """2-norm condition number of the (weighted) Gram matrix, inf if singular."""
    design = np.asarray(design, dtype=float)
    w = np.ones(design.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    vals = np.linalg.eigvalsh((design * w[:, None]).T @ design)
    lo, hi = vals.min(), vals.max()
    if hi <= 0:
        return np.inf
    return np.inf if lo <= hi * 1e-16 else hi / lo


@dataclass(frozen=True, eq=False)
class SeriesFit:
    """Fitted series regression.

    Arms are keyed ``0``, ``1`` or ``"pooled"``. ``rows[arm]`` holds the
    indices (into the training sample) used by that arm and ``design[arm]``
    the corresponding basis matrix.
    """

    basis: object
    arm_coefficients: dict
    gram_inverse: dict
    n_per_arm: dict
    rows: dict
    design: dict

    def predict(self, points, arms=None):
        """Fitted values. With ``arms`` given, row i uses the fit of arm ``arms[i]``."""
        basis_mat = self.basis.evaluate(points)
        if arms is None:
            return basis_mat @ self._coef("pooled")
        arms = np.asarray(arms).ravel()
        out = np.empty(basis_mat.shape[0])
        for a in np.unique(arms):
            sel = arms == a
            out[sel] = basis_mat[sel] @ self._coef(int(a))
        return out

    def _coef(self, arm):
        if arm not in self.arm_coefficients:
            raise KeyError(f"arm {arm!r} was not fitted")
        return self.arm_coefficients[arm]


def fit_series(responses, points, basis, arm_labels=None, subgroup_mask=None):
    """Series least squares fit of ``responses`` on ``basis(points)``.

    Parameters
    ----------
    responses : array of shape (n,)
    points : array of shape (n, d)
    basis : BasisSpec
    arm_labels : array of {0, 1}, optional
        Fit separately within each arm present.
    subgroup_mask : bool array, optional
        Only rows where the mask is true enter the fit.

    Returns
    -------
    SeriesFit
    """
    v = np.asarray(responses, dtype=float).ravel()
    pts = np.asarray(points, dtype=float)
    n = v.shape[0]
    if pts.shape[0] != n:
        raise ValueError("points and responses have different numbers of rows")
    mask = np.ones(n, dtype=bool) if subgroup_mask is None else np.asarray(subgroup_mask, bool)
    if arm_labels is None:
        groups = {"pooled": np.flatnonzero(mask)}
    else:
        labels = np.asarray(arm_labels).ravel()
        groups = {int(a): np.flatnonzero(mask & (labels == a)) for a in np.unique(labels[mask])}
    coefs, ginvs, counts, designs = {}, {}, {}, {}
    for arm, idx in groups.items():
        if idx.size < basis.total_terms:
            raise InsufficientDataError(
                f"arm {arm!r} has {idx.size} rows for {basis.total_terms} basis terms"
            )
        design = basis.evaluate(pts[idx])
        coefs[arm], ginvs[arm] = weighted_least_squares(design, v[idx])
        counts[arm] = idx.size
        designs[arm] = design
    return SeriesFit(basis, coefs, ginvs, counts, groups, designs)


def predict_series(fit, point, arm="pooled"):
    """Fitted conditional mean at one point for one arm."""
    row = fit.basis.evaluate(np.asarray(point, dtype=float).reshape(1, -1))[0]
    return float(row @ fit._coef(arm))


def projection_matrix(fit, arm="pooled"):
    """Linear map taking values on an arm's rows to their fitted values.

    The operator acts on vectors indexed like ``fit.rows[arm]``.
    """
    design = fit.design[arm]
    ginv = fit.gram_inverse[arm]
    m = design.shape[0]

    def matvec(x):
        x = np.asarray(x, dtype=float).reshape(m, -1)
        return design @ (ginv @ (design.T @ x))

    return LinearOperator((m, m), matvec=matvec, matmat=matvec, rmatvec=matvec, dtype=float)


class SeriesRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn regressor wrapping :func:`fit_series`.

    Parameters
    ----------
    degree : int, default=3
    family : str, default="polynomial"
    truncation : str, default="total"
    """

    def __init__(self, degree=3, family="polynomial", truncation="total"):
        self.degree = degree
        self.family = family
        self.truncation = truncation

    def fit(self, X, y, arm=None):
        X, y = check_X_y(X, y, y_numeric=True)
        spec = build_basis(self.family, discrete_degrees(X, self.degree), X.shape[1], self.truncation)
        spec = fit_standardization(spec, X)
        self.fit_ = fit_series(y, X, spec, arm_labels=arm)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, arm=None):
        check_is_fitted(self, "fit_")
        return self.fit_.predict(np.asarray(X, dtype=float), arm)
