"""Synthetic determinations with known coefficients and nationality effects.

Random numbers come from numpy's PCG64 generator seeded with the config
seed, and are drawn in a fixed order, so a seed reproduces a dataset
bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from .data import DEFAULT_COVARIATES, Dataset, Record
from .errors import ConfigError

# control-column proportions of the published descriptive table
DEFAULT_MARGINALS = {
    "sp_decision": 0.02,
    "ria": 0.53,
    "air_travel": 0.42,
    "asylum_reason_political": 0.38,
    "religion_stated": 0.11,
    "ethnicity_stated": 0.30,
    "unaccompanied_minor": 0.04,
    "interviewed": 0.68,
    "ever_married": 0.49,
    "english_speaking": 0.20,
    "free_country_of_origin": 0.42,
    "gdp_ratio": 0.21,
    "at_risk": 0.67,
    "refused_leave_to_land": 0.10,
    "returned_to_origin": 0.05,
    "length_3years": 0.06,
}

ERA_START_YEAR = 2005


@dataclass
class GeneratorConfig:
    n_records: int = 5000
    n_nationalities: int = 40
    marginals: dict = field(default_factory=lambda: dict(DEFAULT_MARGINALS))
    true_beta: dict = field(default_factory=lambda: {"intercept": float(logit(0.3))})
    true_sigma_u: float = 0.0
    era_split: float = 0.5
    seed: int = 0
    p_male: float = 0.6
    p_adult: float = 0.9
    correlation: float = 0.0
    year_range: tuple = (1998, 2013)

    def __post_init__(self):
        self.year_range = tuple(self.year_range)
        self.validate()

    def validate(self):
        if self.n_records < 1 or self.n_nationalities < 1:
            raise ConfigError("n_records and n_nationalities must be positive")
        probs = dict(self.marginals, era_split=self.era_split, p_male=self.p_male, p_adult=self.p_adult)
        for name, p in probs.items():
            if not (0.0 <= float(p) <= 1.0):
                raise ConfigError(f"probability {name}={p} outside [0, 1]")
        unknown = set(self.marginals) - set(DEFAULT_MARGINALS)
        if unknown:
            raise ConfigError(f"no marginal for unknown covariates {sorted(unknown)}")
        allowed = set(DEFAULT_COVARIATES) | {"intercept", "gender", "adult", "after2004", "year"}
        bad = set(self.true_beta) - allowed
        if bad:
            raise ConfigError(f"true_beta names unknown columns {sorted(bad)}")
        if self.true_sigma_u < 0:
            raise ConfigError("true_sigma_u must be nonnegative")
        if not 0.0 <= self.correlation < 1.0:
            raise ConfigError("correlation must lie in [0, 1)")
        lo, hi = self.year_range
        if not lo < ERA_START_YEAR <= hi:
            raise ConfigError("year_range must straddle the era start")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "GeneratorConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(mapping) - known
        if extra:
            raise ConfigError(f"unknown generator settings {sorted(extra)}")
        values = dict(mapping)
        if "marginals" in values:
            values["marginals"] = dict(DEFAULT_MARGINALS, **values["marginals"])
        return cls(**values)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["year_range"] = list(self.year_range)
        return d


def load_generator_config(path) -> GeneratorConfig:
    from .pipeline import read_config_file

    return GeneratorConfig.from_mapping(read_config_file(path))


def generate_dataset(config: GeneratorConfig) -> Dataset:
    """Draw a dataset on the default schema.

    Factors are Bernoulli with the configured marginals; with a positive
    ``correlation`` they share a Gaussian-copula common factor. The outcome
    is Bernoulli(expit(x beta + u_nationality)).
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_records
    nat_code = rng.integers(0, config.n_nationalities, size=n)
    u = rng.normal(0.0, 1.0, size=config.n_nationalities) * config.true_sigma_u
    gender = (rng.random(n) < config.p_male).astype(int)
    adult = (rng.random(n) < config.p_adult).astype(int)
    after = (rng.random(n) < config.era_split).astype(int)
    lo, hi = config.year_range
    year = np.where(
        after == 1,
        rng.integers(ERA_START_YEAR, hi + 1, size=n),
        rng.integers(lo, ERA_START_YEAR, size=n),
    )

    common = rng.normal(size=n)
    rho = config.correlation
    factors = {}
    for name in DEFAULT_MARGINALS:
        latent = math.sqrt(rho) * common + math.sqrt(1.0 - rho) * rng.normal(size=n)
        p = config.marginals.get(name, DEFAULT_MARGINALS[name])
        if name == "unaccompanied_minor":
            # only minors can be unaccompanied; keep the overall marginal where possible
            p_minor = 1.0 - config.p_adult
            p = min(1.0, p / p_minor) if p_minor > 0 else 0.0
        factors[name] = (latent < norm.ppf(p)).astype(int) if 0 < p < 1 else np.full(n, int(p >= 1))
    factors["unaccompanied_minor"] = factors["unaccompanied_minor"] * (1 - adult)
    age = np.where(adult == 1, rng.integers(18, 66, size=n), rng.integers(10, 18, size=n))

    columns = dict(factors, age_years=age, gender=gender, adult=adult, after2004=after, year=year)
    eta = np.full(n, float(config.true_beta.get("intercept", 0.0)))
    for name, b in config.true_beta.items():
        if name != "intercept":
            eta += float(b) * columns[name]
    eta += u[nat_code]
    outcome = (rng.random(n) < expit(eta)).astype(int)

    width = max(3, len(str(config.n_nationalities - 1)))
    records = []
    for i in range(n):
        covs = {name: float(columns[name][i]) for name in DEFAULT_COVARIATES}
        records.append(
            Record(
                id=i + 1,
                outcome=int(outcome[i]),
                nationality=f"N{nat_code[i]:0{width}d}",
                gender=int(gender[i]),
                adult=int(adult[i]),
                after2004=int(after[i]),
                year=int(year[i]),
                covariates=covs,
            )
        )
    tag = json.dumps(config.to_dict(), sort_keys=True)
    return Dataset(records, DEFAULT_COVARIATES, provenance=f"synth:{tag}")


def nationality_effects(config: GeneratorConfig) -> dict[str, float]:
    """The random intercepts drawn for ``config`` (same stream as the dataset)."""
    rng = np.random.default_rng(config.seed)
    rng.integers(0, config.n_nationalities, size=config.n_records)
    u = rng.normal(0.0, 1.0, size=config.n_nationalities) * config.true_sigma_u
    width = max(3, len(str(config.n_nationalities - 1)))
    return {f"N{j:0{width}d}": float(u[j]) for j in range(config.n_nationalities)}

