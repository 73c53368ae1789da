"""Observed-data container and CSV round trip.

A sample holds rows ``(R, T, M, Y, X, Z)``. Covariate columns flagged as
missable are set to 0 wherever ``R == 0``; the remaining covariates are
always observed and act, together with ``M``, ``Y`` and ``Z``, as
conditioning variables for the missingness weight.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._validation import check_binary, check_finite_columns
from .exceptions import SchemaError


@dataclass(frozen=True, eq=False)
class Dataset:
    r: np.ndarray
    t: np.ndarray
    m: np.ndarray
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    missable: np.ndarray
    x_names: tuple = ()
    z_names: tuple = ()

    def __post_init__(self):
        n = self.t.shape[0]
        for name in ("r", "m", "y"):
            if getattr(self, name).shape != (n,):
                raise SchemaError(f"{name} must have shape ({n},)")
        if self.x.ndim != 2 or self.x.shape[0] != n:
            raise SchemaError("x must be a 2-d array with one row per observation")
        if self.z.ndim != 2 or self.z.shape[0] != n:
            raise SchemaError("z must be a 2-d array with one row per observation")
        if self.missable.shape != (self.x.shape[1],):
            raise SchemaError("missable needs one flag per covariate column")
        if not self.missable.any():
            raise SchemaError("at least one covariate must be missable")
        check_binary(self.t, "treatment")
        check_binary(self.r, "missingness indicator")
        if np.any(self.x[self.r == 0][:, self.missable] != 0):
            raise SchemaError("missable covariates must be masked to 0 where R == 0")
        check_finite_columns(self.x, "covariates")

    @classmethod
    def build(cls, r, t, m, y, x, z, missable=None, x_names=None, z_names=None):
        """Coerce arrays and apply the masking convention."""
        t = np.asarray(t, dtype=float).ravel()
        r = np.asarray(r, dtype=float).ravel()
        x = np.array(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if missable is None:
            missable = np.ones(x.shape[1], dtype=bool)
        missable = np.asarray(missable, dtype=bool)
        x[np.ix_(r == 0, missable)] = 0.0
        x_names = tuple(x_names) if x_names is not None else tuple(f"x{j + 1}" for j in range(x.shape[1]))
        z_names = tuple(z_names) if z_names is not None else tuple(
            "z" if z.shape[1] == 1 else f"z{j + 1}" for j in range(z.shape[1])
        )
        return cls(
            r=r,
            t=t,
            m=np.asarray(m, dtype=float).ravel(),
            y=np.asarray(y, dtype=float).ravel(),
            x=x,
            z=z,
            missable=missable,
            x_names=x_names,
            z_names=z_names,
        )

    @property
    def n(self):
        return self.t.shape[0]

    @property
    def observed_x(self):
        """Always-observed covariate columns."""
        return self.x[:, ~self.missable]

    @property
    def conditioning_points(self):
        """(M, Y, Z, always-observed X): the instrument variables for the weight."""
        return np.column_stack([self.m, self.y, self.z, self.observed_x])

    @property
    def weight_points(self):
        """(M, Y, X): arguments of the missingness weight."""
        return np.column_stack([self.m, self.y, self.x])

    @property
    def mx_points(self):
        return np.column_stack([self.m, self.x])

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(
            self.r[rows], self.t[rows], self.m[rows], self.y[rows], self.x[rows], self.z[rows],
            self.missable, self.x_names, self.z_names,
        )

    def with_complete(self, x_full):
        """Copy with every row observed and covariates replaced by ``x_full``."""
        return Dataset.build(
            np.ones(self.n), self.t, self.m, self.y, x_full, self.z,
            self.missable, self.x_names, self.z_names,
        )

    def to_frame(self, missing=np.nan):
        """Table with one column per variable; masked cells become ``missing``."""
        cols = {"T": self.t, "M": self.m, "Y": self.y}
        for j, name in enumerate(self.z_names):
            cols[name] = self.z[:, j]
        for j, name in enumerate(self.x_names):
            col = self.x[:, j].astype(object if isinstance(missing, str) else float).copy()
            if self.missable[j]:
                col[self.r == 0] = missing
            cols[name] = col
        return pd.DataFrame(cols)


@dataclass(frozen=True)
class ColumnRoles:
    """Which table columns play which role.

    ``sentinel`` marks a missing cell in addition to an empty one.
    """

    treatment: str = "T"
    mediator: str = "M"
    outcome: str = "Y"
    shadow: tuple = ("z",)
    covariates: tuple = ()
    missable: tuple = ()
    sentinel: str | None = None
    extra: dict = field(default_factory=dict)


def dataset_from_frame(frame, roles):
    """Build a :class:`Dataset` from a table whose missable cells may be empty.

    ``R`` is 1 exactly when every missable covariate is present.
    """
    df = frame.copy()
    needed = [roles.treatment, roles.mediator, roles.outcome, *roles.shadow, *roles.covariates]
    absent = [c for c in needed if c not in df.columns]
    if absent:
        raise SchemaError(f"missing column(s): {', '.join(absent)}")
    if not roles.missable:
        raise SchemaError("at least one covariate must be declared missable")
    unknown = [c for c in roles.missable if c not in roles.covariates]
    if unknown:
        raise SchemaError(f"missable column(s) not among covariates: {', '.join(unknown)}")
    if roles.sentinel is not None:
        df = df.replace(roles.sentinel, np.nan)
    numeric = {c: _to_float(df[c], c) for c in needed}
    for c in needed:
        if c in roles.missable:
            continue
        if np.isnan(numeric[c]).any():
            raise SchemaError(f"column {c!r} is not declared missable but has missing cells")
    miss = np.column_stack([np.isnan(numeric[c]) for c in roles.missable])
    for j, c in enumerate(roles.missable):
        if miss[:, j].all():
            raise SchemaError(f"missable column {c!r} is entirely missing")
    r = (~miss.any(axis=1)).astype(float)
    x = np.column_stack([np.nan_to_num(numeric[c], nan=0.0) for c in roles.covariates])
    flags = np.array([c in roles.missable for c in roles.covariates])
    check_binary(numeric[roles.treatment], "treatment")
    return Dataset.build(
        r,
        numeric[roles.treatment],
        numeric[roles.mediator],
        numeric[roles.outcome],
        x,
        np.column_stack([numeric[c] for c in roles.shadow]),
        flags,
        roles.covariates,
        roles.shadow,
    )


def _to_float(col, name):
    """Exact float conversion; text cells go through Python's correctly rounded parser."""
    if pd.api.types.is_numeric_dtype(col):
        return col.to_numpy(dtype=float)
    out = np.empty(len(col))
    for i, v in enumerate(col.to_numpy(dtype=object)):
        if v is None or (isinstance(v, float) and np.isnan(v)) or str(v).strip() == "":
            out[i] = np.nan
            continue
        try:
            out[i] = float(str(v).strip())
        except ValueError:
            raise SchemaError(f"column {name!r} has non-numeric values") from None
    return out


def read_csv(path, roles):
    frame = pd.read_csv(path, keep_default_na=roles.sentinel is None, dtype=str if roles.sentinel else None,
                        float_precision="round_trip")
    return dataset_from_frame(frame, roles)


def write_csv(data, path, sentinel=None):
    frame = data.to_frame(missing=sentinel if sentinel is not None else np.nan)
    frame.to_csv(path, index=False, float_format="%.17g")
