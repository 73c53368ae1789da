"""Command-line interface.

    siomed simulate --spec study.json --out results/ [--threads N]
    siomed estimate --config analysis.json --out report/
    siomed validate --config analysis.json

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import SieveConfig
from .data import ColumnRoles, read_csv
from .estimands import weight_normalization
from .exceptions import InvalidConfigError, SchemaError, SiomedError
from .pipeline import SIOMediation, _bases, fit_weight
from .seriesreg import condition_number
from .simulation import StudySpec, run_study, study_tables, write_study

log = logging.getLogger("siomed")

CONDITION_WARNING = 1e12


@dataclass(frozen=True)
class AnalysisConfig:
    input: str
    roles: ColumnRoles
    sieve: SieveConfig = field(default_factory=SieveConfig)
    inference: str = "plugin"
    n_boot: int = 200
    seed: int = 0
    output: str | None = None


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InvalidConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _single(name, value):
    if isinstance(value, list):
        if len(value) != 1:
            raise InvalidConfigError(f"field 'columns.{name}' must name exactly one column")
        value = value[0]
    if not isinstance(value, str) or not value:
        raise InvalidConfigError(f"field 'columns.{name}' must be a column name")
    return value


def parse_analysis_config(raw, base_dir="."):
    """Validate the analysis JSON and resolve the input path against ``base_dir``."""
    if not isinstance(raw, dict):
        raise InvalidConfigError("analysis config must be a JSON object")
    extra = sorted(set(raw) - {"input", "columns", "sieve", "inference", "seed", "output"})
    if extra:
        raise InvalidConfigError(f"unknown field(s): {', '.join(extra)}")
    if "input" not in raw or not isinstance(raw["input"], str):
        raise InvalidConfigError("field 'input' (path to the CSV) is required")
    cols = raw.get("columns")
    if not isinstance(cols, dict):
        raise InvalidConfigError("field 'columns' is required and must be an object")
    for key in ("treatment", "mediator", "outcome", "shadow", "covariates", "missable"):
        if key not in cols:
            raise InvalidConfigError(f"field 'columns.{key}' is required")
    bad = sorted(set(cols) - {"treatment", "mediator", "outcome", "shadow", "covariates", "missable", "sentinel"})
    if bad:
        raise InvalidConfigError(f"unknown field(s) in 'columns': {', '.join(bad)}")
    covs = cols["covariates"]
    miss = cols["missable"]
    if not isinstance(covs, list) or not covs or not all(isinstance(c, str) for c in covs):
        raise InvalidConfigError("field 'columns.covariates' must be a non-empty list of names")
    if not isinstance(miss, list) or not miss or not all(isinstance(c, str) for c in miss):
        raise InvalidConfigError("field 'columns.missable' must list at least one covariate")
    if set(miss) - set(covs):
        raise InvalidConfigError("every entry of 'columns.missable' must also be a covariate")
    sentinel = cols.get("sentinel")
    if sentinel is not None and not isinstance(sentinel, str):
        raise InvalidConfigError("field 'columns.sentinel' must be a string")
    roles = ColumnRoles(
        treatment=_single("treatment", cols["treatment"]),
        mediator=_single("mediator", cols["mediator"]),
        outcome=_single("outcome", cols["outcome"]),
        shadow=(_single("shadow", cols["shadow"]),),
        covariates=tuple(covs),
        missable=tuple(miss),
        sentinel=sentinel,
    )
    inf = raw.get("inference", "plugin")
    n_boot = 200
    if isinstance(inf, dict):
        if inf.get("method") != "bootstrap":
            raise InvalidConfigError("field 'inference.method' must be 'bootstrap' when 'inference' is an object")
        n_boot = inf.get("replicates", 200)
        if isinstance(n_boot, bool) or not isinstance(n_boot, int) or n_boot < 1:
            raise InvalidConfigError("field 'inference.replicates' must be a positive integer")
        inf = "bootstrap"
    if inf not in ("plugin", "bootstrap"):
        raise InvalidConfigError("field 'inference' must be 'plugin' or a bootstrap object")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise InvalidConfigError("field 'seed' must be a nonnegative integer")
    sieve = dict(raw.get("sieve") or {})
    optim = dict(sieve.get("optim") or {})
    optim.setdefault("seed", seed)
    sieve["optim"] = optim
    path = raw["input"]
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    return AnalysisConfig(path, roles, SieveConfig.from_dict(sieve), inf, n_boot, seed, raw.get("output"))


def load_analysis_config(path):
    return parse_analysis_config(_load_json(path), os.path.dirname(os.path.abspath(path)))


def load_dataset(cfg):
    if not os.path.exists(cfg.input):
        raise SchemaError(f"input file not found: {cfg.input}")
    return read_csv(cfg.input, cfg.roles)


def estimator_for(cfg):
    return SIOMediation.from_config(cfg.sieve, inference=cfg.inference, n_boot=cfg.n_boot)


def cmd_estimate(args):
    cfg = load_analysis_config(args.config)
    out = args.out or cfg.output
    if not out:
        raise InvalidConfigError("no output directory: pass --out or set 'output'")
    data = load_dataset(cfg)
    model = estimator_for(cfg).fit(data)
    os.makedirs(out, exist_ok=True)
    model.report_.to_csv(os.path.join(out, "report.csv"))
    model.report_.to_json(os.path.join(out, "report.json"))
    frame = model.summary()[["estimand", "point", "se", "ci_low", "ci_high", "method"]]
    print(frame.to_string(index=False))
    return 0


def validation_summary(data, sieve):
    """Arm counts, Gram condition numbers and the weight-normalization ratio."""
    complete = data.r == 1
    info = {
        "n": data.n,
        "complete_rows": int(complete.sum()),
        "arm_counts": {f"T={t}": {"all": int(np.sum(data.t == t)), "complete": int(np.sum(complete & (data.t == t)))}
                       for t in (0, 1)},
    }
    bases = _bases(data, sieve)
    pts = {
        "weight": data.weight_points[complete],
        "instrument": data.conditioning_points,
        "outcome": data.mx_points[complete],
        "covariate": data.x[complete],
    }
    conds = {}
    for name, key in (("weight", "q"), ("instrument", "p"), ("outcome", "u"), ("covariate", "v")):
        conds[name] = condition_number(bases[key].evaluate(pts[name]))
    info["condition_numbers"] = conds
    info["ill_conditioned"] = sorted(k for k, v in conds.items() if not v < CONDITION_WARNING)
    for t in (0, 1):
        if info["arm_counts"][f"T={t}"]["complete"] == 0:
            raise SchemaError(f"no complete rows with T={t}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        info["weight_normalization"] = weight_normalization(data, fit_weight(data, sieve, bases), warn=False)
    return info


def cmd_validate(args):
    cfg = load_analysis_config(args.config)
    data = load_dataset(cfg)
    info = validation_summary(data, cfg.sieve)
    for name in info["ill_conditioned"]:
        log.warning("%s basis Gram matrix is near-singular (condition number %.3g > %.0e)",
                    name, info["condition_numbers"][name], CONDITION_WARNING)
    lo, hi = 0.8, 1.2
    if not lo <= info["weight_normalization"] <= hi:
        log.warning("weights average to %.3f, outside [%g, %g]", info["weight_normalization"], lo, hi)
    print(json.dumps(info, indent=2, default=float))
    return 0


def cmd_simulate(args):
    spec = StudySpec.from_dict(_load_json(args.spec))
    if args.threads < 1:
        raise InvalidConfigError("--threads must be at least 1")
    results = run_study(spec, threads=args.threads)
    write_study(results, args.out)
    bias, _ = study_tables(results)
    print(bias.to_string(index=False))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="siomed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("--spec", required=True, help="study spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replications")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("estimate", help="estimate mediation effects from a CSV")
    p.add_argument("--config", required=True, help="analysis config JSON")
    p.add_argument("--out", help="output directory (overrides 'output' in the config)")
    p.set_defaults(func=cmd_estimate)
    p = sub.add_parser("validate", help="check data and bases without estimating effects")
    p.add_argument("--config", required=True, help="analysis config JSON")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="siomed: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except SiomedError as exc:
        print(f"siomed: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"siomed: numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
