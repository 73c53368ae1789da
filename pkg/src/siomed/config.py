"""Sieve sizes and optimizer settings for the full estimation pipeline."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from ._validation import check_choice
from .basis import FAMILIES, LINKS, TRUNCATIONS
from .exceptions import InvalidConfigError
from .optim import OptimOptions


@dataclass(frozen=True)
class SieveConfig:
    """Basis degrees for every fitted function.

    Attributes
    ----------
    weight_degree : int
        Degree of the parameter basis for the missingness weight on (M, Y, X);
        also the basis of the representers.
    instrument_degree : int
        Degree of the instrument basis on (M, Y, Z, always-observed X).
    outcome_degree : int
        Basis on (M, X) for the outcome regression and b2.
    covariate_degree : int
        Basis on X for the nested regression, the arm means, b1 and the
        inverse propensities.
    """

    family: str = "polynomial"
    truncation: str = "total"
    weight_degree: int = 1
    instrument_degree: int = 1
    outcome_degree: int = 3
    covariate_degree: int = 3
    weight_link: str = "inverse_logistic"
    propensity_link: str = "inverse_logistic"
    optim: OptimOptions = field(default_factory=OptimOptions)

    def __post_init__(self):
        check_choice(self.family, FAMILIES, "family")
        check_choice(self.truncation, TRUNCATIONS, "truncation")
        check_choice(self.weight_link, LINKS, "weight_link")
        check_choice(self.propensity_link, LINKS, "propensity_link")
        for name in ("weight_degree", "instrument_degree", "outcome_degree", "covariate_degree"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int) or val < 0:
                raise InvalidConfigError(f"{name} must be a nonnegative integer, got {val!r}")
        if self.instrument_degree < self.weight_degree:
            raise InvalidConfigError("instrument_degree must be at least weight_degree")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        """Build from a plain mapping; unknown keys are a config error."""
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)}
        extra = sorted(set(raw) - known)
        if extra:
            raise InvalidConfigError(f"unknown sieve option(s): {', '.join(extra)}")
        opt = raw.pop("optim", None) or {}
        if not isinstance(opt, dict):
            raise InvalidConfigError("sieve.optim must be an object")
        okeys = {f.name for f in fields(OptimOptions)}
        bad = sorted(set(opt) - okeys)
        if bad:
            raise InvalidConfigError(f"unknown optimizer option(s): {', '.join(bad)}")
        return cls(optim=OptimOptions(**opt), **raw)
