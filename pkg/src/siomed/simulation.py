"""Monte Carlo studies: true values, comparator estimators and the replication driver.

Comparators run the same outcome-regression pipeline with unit weights:

* ``Oracle`` on the sample with the latent covariates restored,
* ``CCA`` on the complete rows only,
* ``MI`` on predictive-mean-matching imputations, pooled by Rubin's rules.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
import pandas as pd

from ._validation import check_positive_int
from .config import SieveConfig
from .dgp import DgpConfig, LatentTruth, _outcome_mean, draw_latent, generate
from .estimands import PointEstimates, mediation_effects
from .exceptions import InsufficientDataError, InvalidConfigError, SiomedError
from .inference import ESTIMANDS, Z_95, EstimandRow
from .pipeline import run_pipeline

__all__ = [
    "DgpConfig",
    "LatentTruth",
    "McResult",
    "StudySpec",
    "TrueValues",
    "cca_estimator",
    "generate",
    "mi_estimator",
    "oracle_estimator",
    "oracle_truth",
    "run_monte_carlo",
    "run_study",
    "true_values",
]

METHODS = ("SIO", "Oracle", "MI", "CCA")
TABLE_LABELS = {"theta": "MF", "nie": "NIE", "nde": "NDE", "ate": "ATE"}
FAILURE_FLAG_SHARE = 0.05


@dataclass(frozen=True)
class TrueValues:
    theta: float
    alpha0: float
    alpha1: float
    nie: float
    nde: float
    ate: float
    source: str
    se: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def _closed_form(dgp_id):
    # E X1 = E X2 = 1/2, E X1^2 = E X2^2 = 1/3, E sin(U) = 1 - cos 1 for U ~ Unif(0, 1)
    if dgp_id == 1:
        base, em0 = 1 + 1.5 - 1.5 + 0.5, -1 + 1.5 - 1.0 + 0.5
    else:
        s = 1 - math.cos(1.0)
        base, em0 = -1 + 5 * s - 2 / 3 + 0.5, -1 + 4 / 3 - s + 0.5
    theta = base + 1 + 1.5 * em0
    alpha1 = base + 1 + 1.5 * (em0 + 1)
    alpha0 = base - 1.5 * em0
    return theta, alpha0, alpha1


def true_values(dgp_id):
    """Exact mediation functional, arm means and effects of a simulation design.

    Both designs are simple enough for closed-form expectations; see
    :func:`oracle_truth` for the Monte Carlo cross-check.
    """
    if dgp_id not in (1, 2):
        raise InvalidConfigError(f"dgp_id must be 1 or 2, got {dgp_id!r}")
    theta, alpha0, alpha1 = _closed_form(dgp_id)
    est = mediation_effects(theta, alpha0, alpha1)
    return TrueValues(**est.as_dict(), source="closed_form")


@lru_cache(maxsize=16)
def oracle_truth(dgp_id, draws=10**7, seed=0, omega=0.6, chunk=10**6):
    """Monte Carlo truth from simulated potential outcomes.

    Returns a :class:`TrueValues` whose ``se`` holds the Monte Carlo standard
    error of every entry. Results are cached per argument tuple.
    """
    rng = np.random.default_rng(seed)
    sums = np.zeros(6)
    squares = np.zeros(6)
    done = 0
    while done < draws:
        size = min(chunk, draws - done)
        eps, _, x, _, _, m0, m1 = draw_latent(dgp_id, size, omega, rng)
        x1, x2, x3 = x.T
        e4 = eps[:, 3]
        y10 = _outcome_mean(dgp_id, x1, x2, x3, 1.0, m0) + e4
        y11 = _outcome_mean(dgp_id, x1, x2, x3, 1.0, m1) + e4
        y00 = _outcome_mean(dgp_id, x1, x2, x3, 0.0, m0) + e4
        cols = np.column_stack([y10, y00, y11, y11 - y10, y10 - y00, y11 - y00])
        sums += cols.sum(axis=0)
        squares += (cols**2).sum(axis=0)
        done += size
    mean = sums / draws
    var = squares / draws - mean**2
    se = np.sqrt(np.maximum(var, 0.0) / draws)
    return TrueValues(*mean.tolist(), source=f"monte_carlo(draws={draws}, seed={seed})",
                      se=dict(zip(ESTIMANDS, se.tolist())))


# comparator estimators ------------------------------------------------------


def _complete_run(data, cfg, inference):
    res = run_pipeline(data, cfg, unit_weights=True, inference=inference)
    return res.estimates, (res.report.rows if inference else None)


def oracle_estimator(data, latent, cfg=None, inference=False):
    """Complete-data pipeline with the latent covariates restored."""
    if latent is None:
        raise ValueError("the oracle estimator needs the latent covariates")
    est, rows = _complete_run(data.with_complete(latent.x_full), cfg, inference)
    return (est, rows) if inference else est


def cca_estimator(data, cfg=None, inference=False):
    """Complete-data pipeline on the rows with every covariate observed."""
    keep = np.flatnonzero(data.r == 1)
    if keep.size == 0:
        raise InsufficientDataError("no complete rows")
    est, rows = _complete_run(data.subset(keep), cfg, inference)
    return (est, rows) if inference else est


def pmm_impute(data, rng, donors=5):
    """One predictive-mean-matching draw of the missing covariate values.

    Each missable column is regressed on (T, M, Y, Z, always-observed X) over
    the complete rows. Missing rows are predicted with coefficients drawn
    from their approximate posterior and take the observed value of a random
    donor among the ``donors`` nearest predicted means.
    """
    obs = data.r == 1
    mis = ~obs
    n_obs = int(obs.sum())
    if n_obs < donors:
        raise InsufficientDataError(f"{n_obs} complete rows for {donors} donors")
    x = data.x.copy()
    if not mis.any():
        return x
    design = np.column_stack([np.ones(data.n), data.t, data.m, data.y, data.z, data.observed_x])
    d_obs, d_mis = design[obs], design[mis]
    gram_inv = np.linalg.pinv(d_obs.T @ d_obs)
    df = max(n_obs - design.shape[1], 1)
    for j in np.flatnonzero(data.missable):
        target = x[obs, j]
        beta = gram_inv @ (d_obs.T @ target)
        resid = target - d_obs @ beta
        sigma2 = float(resid @ resid) / rng.chisquare(df)
        cov = sigma2 * gram_inv
        beta_star = rng.multivariate_normal(beta, (cov + cov.T) / 2, method="eigh")
        pick = _draw_donors(d_obs @ beta, d_mis @ beta_star, donors, rng)
        x[mis, j] = target[pick]
    return x


def _draw_donors(pred_obs, pred_mis, donors, rng):
    """Index of a random donor among the ``donors`` nearest observed predictions.

    The nearest neighbours of a value in sorted order lie within ``donors``
    positions of its insertion point, so only that window is searched.
    """
    order = np.argsort(pred_obs, kind="stable")
    srt = pred_obs[order]
    pos = np.searchsorted(srt, pred_mis)
    start = np.clip(pos - donors, 0, max(srt.size - 2 * donors, 0))
    window = start[:, None] + np.arange(min(2 * donors, srt.size))[None, :]
    dist = np.abs(srt[window] - pred_mis[:, None])
    nearest = np.take_along_axis(window, np.argsort(dist, axis=1, kind="stable")[:, :donors], axis=1)
    pick = nearest[np.arange(nearest.shape[0]), rng.integers(0, donors, nearest.shape[0])]
    return order[pick]


def mi_estimator(data, m_imputations=10, donors=5, seed=0, cfg=None, inference=False):
    """Multiple imputation by predictive mean matching, pooled with Rubin's rules.

    With ``inference=True`` also returns interval rows using the total
    (within plus between) variance and normal quantiles.
    """
    check_positive_int(m_imputations, "m_imputations")
    check_positive_int(donors, "donors")
    if not np.any(data.r == 1):
        raise InsufficientDataError("no complete rows to impute from")
    if np.all(data.r == 1):
        # nothing to impute: every imputation is the complete-data fit
        est, rows = _complete_run(data, cfg, inference)
        return (est, [replace(r, method="rubin") for r in rows]) if inference else est
    rng = np.random.default_rng(seed)
    points, ses = [], []
    for _ in range(m_imputations):
        filled = data.with_complete(pmm_impute(data, rng, donors))
        est, rows = _complete_run(filled, cfg, inference)
        points.append([getattr(est, k) for k in ESTIMANDS])
        if inference:
            ses.append([r.se for r in rows])
    points = np.array(points)
    pooled = points.mean(axis=0)
    est = PointEstimates(*pooled.tolist())
    if not inference:
        return est
    within = np.mean(np.array(ses) ** 2, axis=0)
    between = points.var(axis=0, ddof=1) if m_imputations > 1 else np.zeros(len(ESTIMANDS))
    total = np.sqrt(within + (1 + 1 / m_imputations) * between)
    rows = [
        EstimandRow(k, pooled[j], total[j], pooled[j] - Z_95 * total[j], pooled[j] + Z_95 * total[j], "rubin")
        for j, k in enumerate(ESTIMANDS)
    ]
    return est, rows


# Monte Carlo driver -------------------------------------------------------


@dataclass
class McResult:
    """Replication records and their per-(method, estimand) summary.

    ``summary`` has columns method, estimand, truth, bias, sd, cp95,
    replications, failures and flags.
    """

    records: pd.DataFrame
    summary: pd.DataFrame
    truth: dict
    metadata: dict

    def cell(self, method, estimand):
        row = self.summary[(self.summary.method == method) & (self.summary.estimand == estimand)]
        if row.empty:
            raise KeyError((method, estimand))
        return row.iloc[0]


def _method_label(method, omega):
    return f"SIO({omega:g})" if method == "SIO" else method


def _replicate(config, methods, cfg, mi_opts, rep, seed_seq):
    data_seed = int(seed_seq.generate_state(1, dtype=np.uint64)[0])
    data, latent = generate(DgpConfig(config.dgp_id, config.n, config.omega, data_seed))
    out = []
    for method in methods:
        label = _method_label(method, config.omega)
        try:
            if method == "SIO":
                rows = run_pipeline(data, cfg).report.rows
            elif method == "Oracle":
                _, rows = oracle_estimator(data, latent, cfg, inference=True)
            elif method == "CCA":
                _, rows = cca_estimator(data, cfg, inference=True)
            else:
                _, rows = mi_estimator(data, mi_opts["imputations"], mi_opts["donors"], [data_seed, 1], cfg,
                                       inference=True)
        except (SiomedError, np.linalg.LinAlgError) as exc:
            out.append({"rep": rep, "method": label, "estimand": None, "error": f"{type(exc).__name__}: {exc}"})
            continue
        for r in rows:
            out.append({"rep": rep, "method": label, "estimand": r.estimand, "estimate": r.point,
                        "se": r.se, "ci_low": r.ci_low, "ci_high": r.ci_high, "error": None})
    return out


def _summarize(records, truth, methods, replications):
    rows = []
    for method in methods:
        sub = records[records.method == method]
        failed = int(sub[sub.error.notna()].rep.nunique()) if "error" in sub else 0
        for est in ESTIMANDS:
            ok = sub[(sub.estimand == est)]
            vals = ok.estimate.to_numpy(dtype=float)
            t = truth[est]
            flags = []
            if failed > FAILURE_FLAG_SHARE * replications:
                flags.append("failure_rate")
            if vals.size <= 1:
                flags.append("degenerate")
            covered = (ok.ci_low.to_numpy(float) <= t) & (t <= ok.ci_high.to_numpy(float))
            rows.append({
                "method": method,
                "estimand": est,
                "truth": t,
                "bias": float(vals.mean() - t) if vals.size else float("nan"),
                "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                "cp95": float(covered.mean()) if vals.size else float("nan"),
                "replications": int(vals.size),
                "failures": failed,
                "flags": ";".join(flags),
            })
    return pd.DataFrame(rows)


def run_monte_carlo(config, methods=METHODS, replications=200, seed=0, sieve=None, mi_options=None, threads=1):
    """Replicate ``config`` and summarize bias, standard deviation and 95% coverage.

    Every replication draws its dataset from its own stream spawned from
    ``seed``; the result does not depend on ``threads``. Failed fits are
    recorded and excluded, and a method whose failure share exceeds 5% is
    flagged.
    """
    check_positive_int(replications, "replications")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise InvalidConfigError(f"unknown method(s): {', '.join(unknown)}")
    cfg = sieve or SieveConfig()
    mi_opts = {"imputations": 10, "donors": 5, **(mi_options or {})}
    seqs = np.random.SeedSequence(seed).spawn(replications)
    jobs = [(config, tuple(methods), cfg, mi_opts, rep, seqs[rep]) for rep in range(replications)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(lambda a: _replicate(*a), jobs))
    else:
        chunks = [_replicate(*a) for a in jobs]
    records = pd.DataFrame([r for c in chunks for r in c],
                           columns=["rep", "method", "estimand", "estimate", "se", "ci_low", "ci_high", "error"])
    truth = true_values(config.dgp_id).as_dict()
    labels = [_method_label(m, config.omega) for m in methods]
    summary = _summarize(records, truth, labels, replications)
    meta = {
        "dgp_id": config.dgp_id,
        "n": config.n,
        "omega": config.omega,
        "replications": replications,
        "seed": seed,
        "methods": labels,
        "mi": mi_opts,
        "sieve": cfg.to_dict(),
        "truth": truth,
    }
    return McResult(records, summary, truth, meta)


# study specs ------------------------------------------------------------------


@dataclass(frozen=True)
class StudySpec:
    """Grid of simulation cells, read from JSON.

    Comparators do not use the shadow variable, so they run once per
    (design, n), at the first omega listed.
    """

    dgp: tuple = (1,)
    n: tuple = (1000,)
    omega: tuple = (0.6,)
    methods: tuple = METHODS
    replications: int = 200
    seed: int = 0
    sieve: SieveConfig = field(default_factory=SieveConfig)
    mi: dict = field(default_factory=lambda: {"imputations": 10, "donors": 5})

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise InvalidConfigError("study spec must be a JSON object")
        known = {"dgp", "n", "omega", "methods", "replications", "seed", "sieve", "mi"}
        extra = sorted(set(raw) - known)
        if extra:
            raise InvalidConfigError(f"unknown study field(s): {', '.join(extra)}")

        def as_tuple(name, default):
            val = raw.get(name, default)
            return tuple(val) if isinstance(val, (list, tuple)) else (val,)

        reps = raw.get("replications", 200)
        if isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
            raise InvalidConfigError(f"field 'replications' must be a positive integer, got {reps!r}")
        seed = raw.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise InvalidConfigError(f"field 'seed' must be a nonnegative integer, got {seed!r}")
        dgps = as_tuple("dgp", 1)
        if any(d not in (1, 2) for d in dgps):
            raise InvalidConfigError("field 'dgp' must list 1 and/or 2")
        ns = as_tuple("n", 1000)
        if any(isinstance(v, bool) or not isinstance(v, int) or v < 10 for v in ns):
            raise InvalidConfigError("field 'n' must list integers >= 10")
        omegas = as_tuple("omega", 0.6)
        if any(not isinstance(v, (int, float)) or not 0 <= v <= 1 for v in omegas):
            raise InvalidConfigError("field 'omega' must list numbers in [0, 1]")
        methods = as_tuple("methods", METHODS)
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise InvalidConfigError(f"field 'methods' has unknown entries: {', '.join(map(str, bad))}")
        mi = raw.get("mi", {}) or {}
        if not isinstance(mi, dict) or set(mi) - {"imputations", "donors"}:
            raise InvalidConfigError("field 'mi' accepts only 'imputations' and 'donors'")
        return cls(dgps, ns, tuple(float(o) for o in omegas), methods, reps, seed,
                   SieveConfig.from_dict(raw.get("sieve")), {"imputations": 10, "donors": 5, **mi})


def run_study(spec, threads=1):
    """Run every cell of a :class:`StudySpec`; returns a list of McResult."""
    results = []
    cell = 0
    for dgp in spec.dgp:
        for n in spec.n:
            for k, omega in enumerate(spec.omega):
                methods = [m for m in spec.methods if m == "SIO" or k == 0]
                if not methods:
                    continue
                res = run_monte_carlo(DgpConfig(dgp, n, omega), methods, spec.replications,
                                      [spec.seed, cell], spec.sieve, spec.mi, threads)
                results.append(res)
                cell += 1
    return results


def _fmt(v, digits=2):
    return f"{v:.{digits}f}" if np.isfinite(v) else "NA"


def study_tables(results):
    """Wide tables with one row per (design, method) and one column per (n, estimand).

    Returns ``(bias_table, cp_table)``; bias cells read ``bias(sd)`` and
    coverage cells are percentages.
    """
    long = pd.concat([r.summary.assign(dgp=r.metadata["dgp_id"], n=r.metadata["n"]) for r in results])
    long = long[long.estimand.isin(TABLE_LABELS)]
    ns = sorted(long.n.unique())
    order = []
    for _, r in long[["dgp", "method"]].drop_duplicates().iterrows():
        order.append((r.dgp, r.method))
    order.sort(key=lambda k: (k[0], _method_rank(k[1])))
    bias_rows, cp_rows = [], []
    for dgp, method in order:
        b = {"DGP": f"DGP{dgp}", "Methods": method}
        c = dict(b)
        for n in ns:
            for est, lab in TABLE_LABELS.items():
                hit = long[(long.dgp == dgp) & (long.method == method) & (long.n == n) & (long.estimand == est)]
                col = f"n={n} {lab}"
                if hit.empty:
                    b[col] = c[col] = ""
                    continue
                h = hit.iloc[0]
                b[col] = f"{_fmt(h.bias)}({_fmt(h.sd)})"
                c[col] = _fmt(100 * h.cp95, 1)
        bias_rows.append(b)
        cp_rows.append(c)
    return pd.DataFrame(bias_rows), pd.DataFrame(cp_rows)


def _method_rank(label):
    if label == "Oracle":
        return (0, 0.0)
    if label.startswith("SIO("):
        return (1, -float(label[4:-1]))
    return (2, 0.0) if label == "MI" else (3, 0.0)


def write_study(results, out_dir):
    """Write ``table_bias.csv``, ``table_cp.csv``, ``summary.csv``, ``records.csv`` and ``metadata.json``."""
    os.makedirs(out_dir, exist_ok=True)
    bias, cp = study_tables(results)
    bias.to_csv(os.path.join(out_dir, "table_bias.csv"), index=False)
    cp.to_csv(os.path.join(out_dir, "table_cp.csv"), index=False)
    summary = pd.concat([r.summary.assign(dgp=r.metadata["dgp_id"], n=r.metadata["n"], omega=r.metadata["omega"])
                         for r in results])
    summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False, float_format="%.17g")
    records = pd.concat([r.records.assign(dgp=r.metadata["dgp_id"], n=r.metadata["n"], omega=r.metadata["omega"])
                         for r in results])
    records.to_csv(os.path.join(out_dir, "records.csv"), index=False, float_format="%.17g")
    meta = {"cells": [r.metadata for r in results]}
    with open(os.path.join(out_dir, "metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(_plain(meta), fh, indent=2, sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
