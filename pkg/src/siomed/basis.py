"""Sieve bases and link functions.

A basis is a tensor product of univariate functions, one family for every
input variable, truncated so that only a manageable number of products is
kept. Inputs are mapped affinely to [0, 1] before evaluation; the map is
learned from a training sample with :func:`fit_standardization`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InvalidConfigError

FAMILIES = ("polynomial", "spline", "fourier")
TRUNCATIONS = ("total", "additive", "tensor")
LINKS = ("inverse_logistic", "double_exponential", "identity")

_CLAMP = 700.0


def _term_exponents(degrees, truncation):
    cap = max(degrees)
    grids = [range(d + 1) for d in degrees]
    terms = []
    for e in itertools.product(*grids):
        total = sum(e)
        if truncation == "total" and total > cap:
            continue
        if truncation == "additive" and sum(1 for k in e if k) > 1:
            continue
        terms.append(e)
    # constant first, then by total degree; (1, 0) before (0, 1)
    terms.sort(key=lambda e: (sum(e), tuple(-k for k in e)))
    return np.array(terms, dtype=int).reshape(len(terms), len(degrees))


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Tensor-product sieve basis.

    ``exponents[j, d]`` is the index of the univariate function of variable
    ``d`` used by term ``j``; row 0 is all zeros, i.e. the constant term.
    """

    family: str
    degrees: tuple
    exponents: np.ndarray
    truncation: str = "total"
    shift: np.ndarray = field(default=None)
    scale: np.ndarray = field(default=None)

    @property
    def input_dims(self):
        return len(self.degrees)

    @property
    def total_terms(self):
        return self.exponents.shape[0]

    def _univariate(self, s, degree):
        """Columns phi_0..phi_degree of one standardized variable."""
        out = np.empty((s.shape[0], degree + 1))
        out[:, 0] = 1.0
        for k in range(1, degree + 1):
            if self.family == "polynomial" or (self.family == "spline" and k <= 3):
                out[:, k] = s**k
            elif self.family == "spline":
                knot = (k - 3) / (degree - 2)
                out[:, k] = np.clip(s - knot, 0.0, None) ** 3
            else:
                out[:, k] = np.cos(k * np.pi * s)
        return out

    def evaluate(self, points):
        """Design matrix with one row per point."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.input_dims) if self.input_dims > 1 else pts[:, None]
        if pts.shape[1] != self.input_dims:
            raise ValueError(
                f"points have {pts.shape[1]} columns, basis expects {self.input_dims}"
            )
        s = (pts - self.shift) / self.scale
        out = np.ones((pts.shape[0], self.total_terms))
        for d, deg in enumerate(self.degrees):
            if deg == 0:
                continue
            uni = self._univariate(s[:, d], deg)
            out *= uni[:, self.exponents[:, d]]
        return out


def build_basis(family="polynomial", degrees=(3,), dims=None, truncation="total"):
    """Build a basis with identity standardization.

    Parameters
    ----------
    family : {"polynomial", "spline", "fourier"}
    degrees : int or sequence of int
        Per-variable degree cap. A single int is broadcast to ``dims``.
    dims : int, optional
        Number of input variables; inferred from ``degrees`` when omitted.
    truncation : {"total", "additive", "tensor"}
        ``total`` keeps products whose summed degree is at most
        ``max(degrees)``; ``additive`` drops all interactions; ``tensor``
        keeps the full grid.
    """
    if family not in FAMILIES:
        raise InvalidConfigError(f"unknown basis family {family!r}")
    if truncation not in TRUNCATIONS:
        raise InvalidConfigError(f"unknown truncation rule {truncation!r}")
    if np.isscalar(degrees):
        if dims is None:
            dims = 1
        degrees = [int(degrees)] * int(dims)
    degrees = tuple(int(d) for d in degrees)
    if dims is None:
        dims = len(degrees)
    if dims < 1 or len(degrees) == 0:
        raise InvalidConfigError("a basis needs at least one input dimension")
    if len(degrees) != dims:
        raise InvalidConfigError(f"got {len(degrees)} degrees for {dims} dimensions")
    if any(d < 0 for d in degrees):
        raise InvalidConfigError("degrees must be nonnegative")
    exps = _term_exponents(degrees, truncation)
    return BasisSpec(
        family=family,
        degrees=degrees,
        exponents=exps,
        truncation=truncation,
        shift=np.zeros(dims),
        scale=np.ones(dims),
    )


def fit_standardization(spec, points):
    """Return a copy of ``spec`` mapping the sample range of each column to [0, 1].

    Constant columns keep scale 1 so they map to 0 instead of dividing by zero.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, spec.input_dims)
    lo = np.nanmin(pts, axis=0)
    hi = np.nanmax(pts, axis=0)
    span = hi - lo
    span = np.where(span > 0, span, 1.0)
    return replace(spec, shift=lo, scale=span)


def evaluate_basis(spec, point):
    """Basis vector at a single point."""
    p = np.asarray(point, dtype=float).ravel()
    if p.shape[0] != spec.input_dims:
        raise ValueError(f"point has length {p.shape[0]}, basis expects {spec.input_dims}")
    return spec.evaluate(p[None, :])[0]


def discrete_degrees(points, degree):
    """Per-column degree caps: ``degree`` for continuous columns, 1 for binary ones."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    caps = []
    for col in pts.T:
        vals = np.unique(col[np.isfinite(col)])
        caps.append(min(degree, 1) if vals.size <= 2 else degree)
    return caps


@dataclass(frozen=True)
class LinkSpec:
    """Monotone link used by generalized-linear sieves.

    ``inverse_logistic`` is v -> 1 + exp(-v) and ``double_exponential`` is
    v -> exp(exp(v)); both map onto (1, inf).
    """

    kind: str = "inverse_logistic"

    def __post_init__(self):
        if self.kind not in LINKS:
            raise InvalidConfigError(f"unknown link {self.kind!r}")

    @property
    def range_floor(self):
        return -np.inf if self.kind == "identity" else 1.0

    @property
    def is_linear(self):
        return self.kind == "identity"

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return v
        v = np.clip(v, -_CLAMP, _CLAMP)
        if self.kind == "inverse_logistic":
            return 1.0 + np.exp(-v)
        return np.exp(np.minimum(np.exp(v), _CLAMP))

    def grad(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return np.ones_like(v)
        v = np.clip(v, -_CLAMP, _CLAMP)
        if self.kind == "inverse_logistic":
            return -np.exp(-v)
        inner = np.minimum(np.exp(v), _CLAMP)
        return inner * np.exp(inner)

    def inverse(self, y):
        """Link preimage; values at or below the range floor are nudged inside."""
        y = np.asarray(y, dtype=float)
        if self.kind == "identity":
            return y
        y = np.maximum(y, 1.0 + 1e-12)
        if self.kind == "inverse_logistic":
            return -np.log(y - 1.0)
        return np.log(np.log(y))


def link_apply(link, v):
    return link.apply(v)


def link_grad(link, v):
    return link.grad(v)


class SieveFeatures(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer producing a standardized sieve design matrix.

    Parameters
    ----------
    family : str, default="polynomial"
    degree : int, default=3
        Degree cap for continuous columns.
    truncation : str, default="total"
    discrete_cap : bool, default=True
        Give binary columns degree cap 1.

    Attributes
    ----------
    spec_ : BasisSpec
    n_features_in_ : int
    """

    def __init__(self, family="polynomial", degree=3, truncation="total", discrete_cap=True):
        self.family = family
        self.degree = degree
        self.truncation = truncation
        self.discrete_cap = discrete_cap

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if self.discrete_cap:
            degrees = discrete_degrees(X, self.degree)
        else:
            degrees = [self.degree] * X.shape[1]
        spec = build_basis(self.family, degrees, X.shape[1], self.truncation)
        self.spec_ = fit_standardization(spec, X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self.spec_.evaluate(X)
