"""Exact-stratum, propensity-score nearest-neighbour matching without replacement."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .data import MATCHING_VARIABLES, Dataset, StratumKey
from .errors import ConfigError, IntegrityError, SchemaError
from .glm import FitSpec
from .glmm import FittedGlmm, MixedFitSpec, fit_random_intercept_logistic

RULES = ("equal", "case_ge", "case_le")


@dataclass(frozen=True)
class ConstraintRule:
    variable: str
    rule: str = "equal"

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown constraint rule {self.rule!r}; expected one of {RULES}")

    def allows(self, case_value, control_values):
        if self.rule == "equal":
            return control_values == case_value
        if self.rule == "case_ge":
            return case_value >= control_values
        return case_value <= control_values


@dataclass(frozen=True)
class ConstraintSet:
    rules: tuple[ConstraintRule, ...] = ()

    @classmethod
    def default(cls) -> "ConstraintSet":
        return cls((ConstraintRule("unaccompanied_minor", "equal"),))

    @classmethod
    def from_config(cls, items) -> "ConstraintSet":
        """Accept ``[{"variable": v, "rule": r}, ...]`` or ``{v: r, ...}``."""
        if isinstance(items, dict):
            items = [{"variable": k, "rule": v} for k, v in items.items()]
        return cls(tuple(ConstraintRule(**item) for item in items))

    def to_config(self) -> list[dict]:
        return [{"variable": r.variable, "rule": r.rule} for r in self.rules]

    def check_schema(self, data: Dataset) -> None:
        unknown = [r.variable for r in self.rules if r.variable not in data.columns]
        if unknown:
            raise SchemaError(f"constraints reference unknown variables {unknown}")

    def satisfied(self, case_values: dict, control_values: dict) -> bool:
        return all(bool(r.allows(case_values[r.variable], control_values[r.variable])) for r in self.rules)


@dataclass
class PropensityModel:
    """Outcome model with a random intercept, used as the matching score."""

    fitted: FittedGlmm
    variables: list[str]
    grouping: str = "nationality"

    def score(self, record) -> float:
        x = [[float(record.value(v)) for v in self.variables]]
        return float(self.fitted.predict(x, [str(record.value(self.grouping))])[0])

    def scores(self, data: Dataset) -> np.ndarray:
        X = data.matrix(self.variables)
        groups = [str(g) for g in data.column(self.grouping)]
        return self.fitted.predict(X, groups)


def compute_propensity(data: Dataset, selected: Sequence[str], grouping: str = "nationality",
                       spec: MixedFitSpec | None = None) -> PropensityModel:
    """Fit outcome ~ selected fixed effects + random intercept on ``grouping``."""
    missing = [v for v in list(selected) + [grouping] if v not in data.columns]
    if missing:
        raise SchemaError(f"propensity variables missing from data: {missing}")
    spec = spec or MixedFitSpec(fixed=FitSpec(predictors=tuple(selected)), grouping=grouping)
    fitted = fit_random_intercept_logistic(
        data.matrix(selected), data.column("outcome"), data.column(grouping), spec, names=list(selected)
    )
    return PropensityModel(fitted, list(selected), grouping)


@dataclass(frozen=True)
class MatchedSet:
    case_id: int
    control_ids: tuple[int, ...]
    distances: tuple[float, ...]
    stratum: StratumKey


@dataclass
class MatchResult:
    sets: list[MatchedSet]
    dropped_case_ids: list[int]
    k: int
    n_cases: int
    n_refusals: int
    constraints: ConstraintSet = field(default_factory=ConstraintSet)

    def __iter__(self):
        return iter(self.sets)

    def __len__(self):
        return len(self.sets)

    def __getitem__(self, i):
        return self.sets[i]

    @property
    def n_pairs(self) -> int:
        return sum(len(s.control_ids) for s in self.sets)

    @property
    def consumed_fraction(self) -> float:
        return self.n_pairs / self.n_refusals if self.n_refusals else 0.0

    def summary(self) -> dict:
        return {
            "k": self.k,
            "n_cases": self.n_cases,
            "n_refusals": self.n_refusals,
            "n_sets": len(self.sets),
            "n_pairs": self.n_pairs,
            "n_dropped_cases": len(self.dropped_case_ids),
            "consumed_control_fraction": self.consumed_fraction,
            "n_nationalities": len({s.stratum.nationality for s in self.sets}),
            "constraints": self.constraints.to_config(),
        }


def _scores_for(data: Dataset, model) -> np.ndarray:
    if isinstance(model, PropensityModel):
        return np.asarray(model.scores(data), dtype=float)
    if isinstance(model, dict):
        return np.array([model[r.id] for r in data.records], dtype=float)
    scores = np.asarray(model, dtype=float)
    if scores.shape != (len(data),):
        raise ValueError("score array must align with data.records")
    return scores


def match_cases(data: Dataset, model, k: int = 3, constraints: ConstraintSet | None = None,
                caliper: float | None = None) -> MatchResult:
    """Greedy 1:k matching of grants to refusals within exact strata.

    Cases are processed in ascending id order. Each takes the ``k`` nearest
    unused, constraint-satisfying refusals of its stratum by absolute score
    difference (ties to the lower id); consumed refusals are never reused.
    Cases with an empty pool are dropped and listed.

    ``model`` is a :class:`PropensityModel`, an array of scores aligned with
    ``data.records``, or a ``{record_id: score}`` mapping.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    constraints = ConstraintSet() if constraints is None else constraints
    constraints.check_schema(data)
    scores = _scores_for(data, model)
    ids = data.column("id")
    outcome = data.column("outcome")
    strata = [r.stratum for r in data.records]
    rule_cols = {r.variable: np.asarray(data.column(r.variable)) for r in constraints.rules}

    pools = defaultdict(list)
    for pos in np.flatnonzero(outcome == 0):
        pools[strata[pos]].append(pos)
    pools = {key: np.array(sorted(v, key=lambda p: ids[p])) for key, v in pools.items()}
    used = np.zeros(len(data), dtype=bool)

    sets, dropped = [], []
    case_pos = np.flatnonzero(outcome == 1)
    for pos in case_pos[np.argsort(ids[case_pos], kind="stable")]:
        pool = pools.get(strata[pos])
        if pool is None:
            dropped.append(int(ids[pos]))
            continue
        ok = ~used[pool]
        for rule in constraints.rules:
            col = rule_cols[rule.variable]
            ok &= rule.allows(col[pos], col[pool])
        cand = pool[ok]
        dist = np.abs(scores[pos] - scores[cand])
        if caliper is not None:
            keep = dist <= caliper
            cand, dist = cand[keep], dist[keep]
        if cand.size == 0:
            dropped.append(int(ids[pos]))
            continue
        order = np.lexsort((ids[cand], dist))[:k]
        chosen = cand[order]
        used[chosen] = True
        sets.append(
            MatchedSet(
                case_id=int(ids[pos]),
                control_ids=tuple(int(i) for i in ids[chosen]),
                distances=tuple(float(d) for d in dist[order]),
                stratum=strata[pos],
            )
        )
    return MatchResult(sets, dropped, k, int(case_pos.size), int((outcome == 0).sum()), constraints)


@dataclass(frozen=True)
class PairRow:
    pair_id: int
    case_id: int
    control_id: int
    z: dict
    nationality: str
    case_context: dict
    control_context: dict
    response: int = 1


def build_pair_rows(sets: Iterable[MatchedSet], data: Dataset, modeled_vars: Sequence[str]) -> list[PairRow]:
    """One row per (case, control) with case-minus-control differences."""
    modeled_vars = list(modeled_vars)
    matched = [v for v in modeled_vars if v in MATCHING_VARIABLES]
    if matched:
        raise ValueError(f"matching variables cannot be modelled: {matched}")
    missing = [v for v in modeled_vars if v not in data.columns]
    if missing:
        raise SchemaError(f"modelled variables missing from data: {missing}")
    context_vars = [v for v in MATCHING_VARIABLES if v != "nationality"]
    rows = []
    for s in sets:
        case = data.get(s.case_id)
        for control_id in s.control_ids:
            control = data.get(control_id)
            z = {v: float(case.value(v)) - float(control.value(v)) for v in modeled_vars}
            rows.append(
                PairRow(
                    pair_id=len(rows),
                    case_id=case.id,
                    control_id=control.id,
                    z=z,
                    nationality=case.nationality,
                    case_context={v: case.value(v) for v in context_vars},
                    control_context={v: control.value(v) for v in context_vars},
                )
            )
    return rows


def pair_matrix(rows: Sequence[PairRow], names: Sequence[str]) -> np.ndarray:
    if not rows:
        return np.empty((0, len(names)))
    return np.array([[r.z[n] for n in names] for r in rows], dtype=float)


def _smd(case_values, control_values):
    m1, m0 = case_values.mean(), control_values.mean()
    pooled = np.sqrt((case_values.var() + control_values.var()) / 2.0)
    if pooled == 0:
        return 0.0, True
    return float((m1 - m0) / pooled), False


def balance_check(sets: Sequence[MatchedSet], data: Dataset, variables: Sequence[str] | None = None) -> pd.DataFrame:
    """Standardised mean differences of cases vs controls, before and after matching.

    "Before" compares every grant with every refusal; "after" compares the
    matched cases with their matched controls, each record counted once.
    The pooled SD is ``sqrt((var_case + var_control) / 2)``; a zero pooled SD
    gives an SMD of 0 and sets the degenerate flag.
    """
    sets = list(sets)
    if not sets:
        raise ValueError("balance_check needs at least one matched set")
    variables = list(variables) if variables is not None else list(data.schema)
    index = data.index()
    try:
        case_pos = np.array([index[s.case_id] for s in sets])
        control_pos = np.array([index[c] for s in sets for c in s.control_ids])
    except KeyError as exc:
        raise IntegrityError(f"matched set references unknown id {exc.args[0]}") from None
    outcome = data.column("outcome")
    rows = {}
    for v in variables:
        x = data.column(v).astype(float)
        before, deg_before = _smd(x[outcome == 1], x[outcome == 0])
        after, deg_after = _smd(x[case_pos], x[control_pos])
        rows[v] = {
            "mean_case_before": float(x[outcome == 1].mean()),
            "mean_control_before": float(x[outcome == 0].mean()),
            "smd_before": before,
            "mean_case_after": float(x[case_pos].mean()),
            "mean_control_after": float(x[control_pos].mean()),
            "smd_after": after,
            "degenerate_before": deg_before,
            "degenerate_after": deg_after,
        }
    table = pd.DataFrame.from_dict(rows, orient="index")
    table.index.name = "variable"
    return table


MATCHED_SET_COLUMNS = ["case_id", "control_rank", "control_id", "distance"] + list(MATCHING_VARIABLES)


def write_matched_sets(sets: Iterable[MatchedSet], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATCHED_SET_COLUMNS)
        for s in sets:
            for rank, (cid, d) in enumerate(zip(s.control_ids, s.distances), start=1):
                st = s.stratum
                w.writerow([s.case_id, rank, cid, repr(d), st.nationality, st.gender, st.adult, st.after2004])


def read_matched_sets(path) -> list[MatchedSet]:
    """Inverse of :func:`write_matched_sets`; comment lines are skipped."""
    grouped: dict[int, list] = {}
    strata = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = set(MATCHED_SET_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise SchemaError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            case_id = int(row["case_id"])
            grouped.setdefault(case_id, []).append((int(row["control_rank"]), int(row["control_id"]), float(row["distance"])))
            strata[case_id] = StratumKey(row["nationality"], int(row["gender"]), int(row["adult"]), int(row["after2004"]))
    sets = []
    for case_id, items in grouped.items():
        items.sort()
        sets.append(MatchedSet(case_id, tuple(i[1] for i in items), tuple(i[2] for i in items), strata[case_id]))
    return sets


def write_pair_rows(rows: Sequence[PairRow], names: Sequence[str], path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "case_id", "control_id", "nationality", "response"] + [f"z_{n}" for n in names])
        for r in rows:
            w.writerow([r.pair_id, r.case_id, r.control_id, r.nationality, r.response] + [repr(r.z[n]) for n in names])
