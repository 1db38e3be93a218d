"""Record schema, CSV ingestion and simple descriptive statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import EmptyInputError, IntegrityError, SchemaError, ValidationError

MATCHING_VARIABLES = ("nationality", "gender", "adult", "after2004")
MANDATORY_COLUMNS = ("id", "outcome") + MATCHING_VARIABLES + ("year",)

DEFAULT_COVARIATES = (
    "sp_decision",
    "ria",
    "air_travel",
    "asylum_reason_political",
    "religion_stated",
    "ethnicity_stated",
    "unaccompanied_minor",
    "interviewed",
    "ever_married",
    "english_speaking",
    "free_country_of_origin",
    "gdp_ratio",
    "at_risk",
    "refused_leave_to_land",
    "returned_to_origin",
    "length_3years",
    "age_years",
)

NUMERIC_COVARIATES = frozenset({"age_years"})

# Published as per-nationality counts; ingested as indicators (count > 0).
COUNT_COVARIATES = frozenset({"refused_leave_to_land", "returned_to_origin"})

AGE_BOUNDS = (0.0, 120.0)
DEFAULT_YEAR_RANGE = (1998, 2013)

# canonical name -> label used in published tables
TABLE1_LABELS = {
    "outcome": "IP Determination Outcome",
    "nationality": "Nationality",
    "gender": "Gender (female)",
    "adult": "Adult",
    "after2004": "After 2004",
    "sp_decision": "SP Decision (Yes)",
    "unaccompanied_minor": "Unaccompanied Minor",
    "interviewed": "Interviewed",
    "free_country_of_origin": "Free Country of Origin",
    "at_risk": "At Risk (political terror scale)",
    "refused_leave_to_land": "Refused Leave to Land",
    "returned_to_origin": "Returned to Country of Origin",
    "age_years": "Age (Years)",
    "ria": "RIA (Yes)",
    "air_travel": "Air Travel (Yes)",
    "asylum_reason_political": "Asylum Reason (political)",
    "religion_stated": "Religion (stated)",
    "ethnicity_stated": "Ethnicity (stated)",
    "ever_married": "Ever Married (Yes)",
    "english_speaking": "English Speaking (Yes)",
    "year": "Year (of determination)",
    "length_3years": "Length (3 Years)",
    "gdp_ratio": "GDP Ratio",
}


def is_factor(name: str) -> bool:
    return name not in NUMERIC_COVARIATES and name not in ("year", "id", "nationality")


def factor_covariates(schema: Sequence[str]) -> list[str]:
    return [name for name in schema if is_factor(name)]


@dataclass(frozen=True)
class StratumKey:
    nationality: str
    gender: int
    adult: int
    after2004: int

    @classmethod
    def of(cls, record: "Record") -> "StratumKey":
        return cls(record.nationality, record.gender, record.adult, record.after2004)


@dataclass(frozen=True)
class Record:
    id: int
    outcome: int
    nationality: str
    gender: int
    adult: int
    after2004: int
    year: int
    covariates: Mapping[str, float]

    def value(self, name: str):
        if name in self.covariates:
            return self.covariates[name]
        return getattr(self, name)

    @property
    def stratum(self) -> StratumKey:
        return StratumKey.of(self)


@dataclass
class Dataset:
    records: list[Record]
    schema: tuple[str, ...] = DEFAULT_COVARIATES
    provenance: str = ""
    _columns: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        if len(set(self.schema)) != len(self.schema):
            raise SchemaError("duplicate covariate names in schema")
        clash = set(self.schema) & set(MANDATORY_COLUMNS)
        if clash:
            raise SchemaError(f"covariates shadow mandatory columns: {sorted(clash)}")
        expected = set(self.schema)
        seen = set()
        for rec in self.records:
            if set(rec.covariates) != expected:
                raise SchemaError(f"record {rec.id} does not carry exactly the schema covariates")
            if rec.id in seen:
                raise ValidationError(f"duplicate id {rec.id}")
            seen.add(rec.id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def columns(self) -> tuple[str, ...]:
        return MANDATORY_COLUMNS + self.schema

    def index(self) -> dict[int, int]:
        """Map record id to its position in ``records``."""
        if self._index is None:
            self._index = {rec.id: i for i, rec in enumerate(self.records)}
        return self._index

    def get(self, record_id: int) -> Record:
        try:
            return self.records[self.index()[record_id]]
        except KeyError:
            raise IntegrityError(f"unknown record id {record_id}") from None

    def column(self, name: str) -> np.ndarray:
        """Column as a numpy array (object dtype for nationality)."""
        if name not in self._columns:
            if name == "nationality":
                values = np.array([r.nationality for r in self.records], dtype=object)
            elif name in ("id", "outcome", "gender", "adult", "after2004", "year"):
                values = np.array([getattr(r, name) for r in self.records], dtype=np.int64)
            elif name in self.schema:
                values = np.array([r.covariates[name] for r in self.records], dtype=float)
            else:
                raise SchemaError(f"unknown column {name!r}")
            values.setflags(write=False)
            self._columns[name] = values
        return self._columns[name]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.empty((len(self), 0))
        return np.column_stack([self.column(n).astype(float) for n in names])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: self.column(name) for name in self.columns})


def _parse_binary(raw: str):
    if raw in ("0", "1"):
        return int(raw)
    try:
        value = float(raw)
    except ValueError:
        return None
    if value in (0.0, 1.0):
        return int(value)
    return None


def load_dataset(
    path,
    schema_config: Sequence[str] | None = None,
    year_range: tuple[int, int] = DEFAULT_YEAR_RANGE,
) -> Dataset:
    """Read a header-driven CSV file into a validated :class:`Dataset`.

    Every problem found is collected before raising, so a single
    :class:`ValidationError` reports all offending rows. Row numbers count
    data rows from 1; the physical line number is also given.
    """
    schema = tuple(schema_config) if schema_config is not None else DEFAULT_COVARIATES
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.reader(lines)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in MANDATORY_COLUMNS + schema if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        extra = [c for c in header if c not in MANDATORY_COLUMNS + schema]
        if extra:
            raise SchemaError(f"{path}: unexpected columns {extra}")
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicated header names")
        pos = {name: i for i, name in enumerate(header)}

        records, problems, seen = [], [], {}
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                problems.append((row_no, f"expected {len(header)} fields, got {len(row)}"))
                continue
            rec, errs = _parse_row(row, pos, schema, year_range)
            if rec is not None and rec.id in seen:
                errs.append(f"duplicate id {rec.id} (first on row {seen[rec.id]})")
            if errs:
                problems.extend((row_no, e) for e in errs)
                continue
            seen[rec.id] = row_no
            records.append(rec)
    if problems:
        detail = "; ".join(f"row {r} (line {r + 1}): {m}" for r, m in problems[:20])
        more = "" if len(problems) <= 20 else f"; ... {len(problems) - 20} more"
        raise ValidationError(f"{path}: {len(problems)} invalid row(s): {detail}{more}", problems)
    return Dataset(records, schema, provenance=f"csv:{path.name}")


def _parse_row(row, pos, schema, year_range):
    errs = []
    cell = {name: row[i].strip() for name, i in pos.items()}
    for name in MANDATORY_COLUMNS + tuple(schema):
        if cell[name] == "":
            errs.append(f"missing value in {name}")
    if errs:
        return None, errs

    try:
        rid = int(cell["id"])
        if rid < 0:
            errs.append(f"negative id {rid}")
    except ValueError:
        rid = None
        errs.append(f"id {cell['id']!r} is not an integer")

    binaries = {}
    for name in ("outcome", "gender", "adult", "after2004"):
        value = _parse_binary(cell[name])
        if value is None:
            errs.append(f"{name}={cell[name]!r} is not binary")
        binaries[name] = value

    try:
        year = int(cell["year"])
        if not year_range[0] <= year <= year_range[1]:
            errs.append(f"year {year} outside {year_range[0]}-{year_range[1]}")
    except ValueError:
        year = None
        errs.append(f"year {cell['year']!r} is not an integer")

    covariates = {}
    for name in schema:
        raw = cell[name]
        if name in COUNT_COVARIATES:
            try:
                count = float(raw)
            except ValueError:
                errs.append(f"{name}={raw!r} is not numeric")
                continue
            if not math.isfinite(count) or count < 0:
                errs.append(f"{name}={raw!r} must be a nonnegative count")
                continue
            covariates[name] = 1.0 if count > 0 else 0.0
        elif name in NUMERIC_COVARIATES:
            try:
                value = float(raw)
            except ValueError:
                errs.append(f"{name}={raw!r} is not numeric")
                continue
            if not (math.isfinite(value) and AGE_BOUNDS[0] <= value <= AGE_BOUNDS[1]):
                errs.append(f"{name}={raw!r} out of bounds")
                continue
            covariates[name] = value
        else:
            value = _parse_binary(raw)
            if value is None:
                errs.append(f"{name}={raw!r} is not binary")
                continue
            covariates[name] = float(value)

    if covariates.get("unaccompanied_minor") == 1.0 and binaries.get("adult") == 1:
        errs.append("unaccompanied_minor=1 requires adult=0")
    if errs:
        return None, errs
    record = Record(
        id=rid,
        outcome=binaries["outcome"],
        nationality=cell["nationality"],
        gender=binaries["gender"],
        adult=binaries["adult"],
        after2004=binaries["after2004"],
        year=year,
        covariates=covariates,
    )
    return record, errs


def _format_value(name, value):
    if name in NUMERIC_COVARIATES:
        return repr(float(value))
    return str(int(value))


def write_dataset(data: Dataset, path, header_comment: str | None = None) -> None:
    """Write ``data`` in the CSV layout :func:`load_dataset` reads."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(data.columns)
        for r in data.records:
            writer.writerow(
                [r.id, r.outcome, r.nationality, r.gender, r.adult, r.after2004, r.year]
                + [_format_value(n, r.covariates[n]) for n in data.schema]
            )


def recognition_rate(data: Dataset, by_year: bool = True):
    """Grants divided by all determinations.

    Returns ``{year: rate}`` sorted by year, or a single float when
    ``by_year`` is false.
    """
    if len(data) == 0:
        raise EmptyInputError("recognition rate of an empty dataset")
    outcome = data.column("outcome")
    if not by_year:
        return float(outcome.sum() / outcome.size)
    years = data.column("year")
    rates = {}
    for year in np.unique(years):
        mask = years == year
        rates[int(year)] = float(outcome[mask].sum() / mask.sum())
    return rates


def describe_attributes(
    sets: Iterable,
    data: Dataset,
    variables: Sequence[str] | None = None,
    era: str = "after2004",
) -> pd.DataFrame:
    """Proportion of cases and of controls having each attribute.

    Columns ``case`` / ``control`` use the original factor, the ``_x_era``
    columns use its product with the era indicator. Every control record
    counts once regardless of the matching ratio.
    """
    if variables is None:
        variables = factor_covariates(data.schema)
    case_ids, control_ids = [], []
    for s in sets:
        case_ids.append(s.case_id)
        control_ids.extend(s.control_ids)
    if not case_ids:
        raise EmptyInputError("no matched sets to describe")
    index = data.index()
    try:
        case_pos = np.array([index[i] for i in case_ids])
        control_pos = np.array([index[i] for i in control_ids], dtype=int)
    except KeyError as exc:
        raise IntegrityError(f"matched set references unknown id {exc.args[0]}") from None

    era_col = data.column(era).astype(float)
    rows = {}
    for name in variables:
        x = data.column(name).astype(float)
        xe = x * era_col

        def prop(values, positions):
            return float(values[positions].mean()) if positions.size else float("nan")

        rows[name] = {
            "case": prop(x, case_pos),
            "control": prop(x, control_pos),
            "case_x_era": prop(xe, case_pos),
            "control_x_era": prop(xe, control_pos),
        }
    table = pd.DataFrame.from_dict(rows, orient="index")
    table.index.name = "variable"
    return table
