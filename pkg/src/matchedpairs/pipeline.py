"""End-to-end analysis run and the individual stages it is built from.

Each stage reads its inputs from, and writes its artifacts to, one output
directory. Every artifact declares the hash of the configuration that made
it, and a directory holding artifacts of another configuration is refused.
No artifact contains a timestamp, so identical configurations give
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path

import numpy as np

from . import replication
from .data import (
    DEFAULT_COVARIATES,
    DEFAULT_YEAR_RANGE,
    MATCHING_VARIABLES,
    Dataset,
    describe_attributes,
    factor_covariates,
    load_dataset,
    recognition_rate,
    write_dataset,
)
from .errors import ConfigError, FitError, MatchedPairsError, OutputError, SchemaError
from .glm import FitSpec
from .glmm import MixedFitSpec
from .matching import (
    ConstraintSet,
    balance_check,
    build_pair_rows,
    compute_propensity,
    match_cases,
    read_matched_sets,
    write_matched_sets,
    write_pair_rows,
)
from .paired import (
    FitReport,
    build_interaction_design,
    fit_conditional_pairs,
    fit_paired_mixed,
    group_odds_summary,
    side_by_side_markdown,
    stack_matched_sets,
)
from .selection import SelectionTrace, forward_select
from .synth import GeneratorConfig, generate_dataset

log = logging.getLogger(__name__)

THREADS_ENV = "MATCHEDPAIRS_THREADS"
INCOMPLETE_MARKER = "INCOMPLETE"
MANIFEST = "manifest.json"
HASH_EXCLUDED = ("output_dir", "threads", "input")

ARTIFACTS = {
    "data": "data.csv",
    "validation": "validation.json",
    "selection": "selection_trace.json",
    "deviance_plot": "deviance_plot.csv",
    "propensity": "propensity.json",
    "scores": "scores.csv",
    "matched_sets": "matched_sets.csv",
    "pair_rows": "pair_rows.csv",
    "matching_summary": "matching_summary.json",
    "balance_json": "balance.json",
    "balance_csv": "balance.csv",
    "descriptives_json": "descriptives.json",
    "descriptives_md": "descriptives.md",
    "conditional_json": "conditional_report.json",
    "conditional_md": "conditional_report.md",
    "mixed_json": "mixed_report.json",
    "mixed_md": "mixed_report.md",
    "table": "table3.md",
    "group_odds": "group_odds.json",
}


def read_config_file(path) -> dict:
    """Parse a JSON or TOML configuration file into a plain dict."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".toml":
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            return tomllib.loads(raw.decode("utf-8"))
        value = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(value, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    return value


@dataclass
class PipelineConfig:
    """Everything a run needs; ``generator`` replaces ``input`` for synthetic runs.

    ``originals`` defaults to the factor covariates of the schema and
    ``interactions`` to the published combination rows present among them.
    """

    input: str | None = None
    generator: dict | None = None
    schema: list = field(default_factory=lambda: list(DEFAULT_COVARIATES))
    year_range: list = field(default_factory=lambda: list(DEFAULT_YEAR_RANGE))
    candidates: list | None = None
    threshold: float | None = None
    selection_random_group: str | None = "nationality"
    propensity_grouping: str = "nationality"
    ratio: int = 3
    constraints: list = field(default_factory=lambda: ConstraintSet.default().to_config())
    caliper: float | None = None
    originals: list | None = None
    interactions: list | None = None
    era: str = "after2004"
    conditional_mode: str = "flatten"
    fit_mixed: bool = True
    mixed_grouping: str = "nationality"
    quadrature_points: int = 25
    factor_groups: dict = field(default_factory=lambda: {
        "applicant": list(replication.APPLICANT_FACTORS),
        "procedural": list(replication.PROCEDURAL_FACTORS),
    })
    significant_only: bool = True
    output_dir: str = "out"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.schema = list(self.schema)
        self.year_range = list(self.year_range)
        if self.candidates is None:
            self.candidates = list(self.schema) + ["year"]
        if self.originals is None:
            self.originals = factor_covariates(self.schema)
        if self.interactions is None:
            self.interactions = [v for v in replication.INTERACTED_FACTORS if v in self.originals]
        self.validate()

    def validate(self):
        if self.ratio < 1:
            raise ConfigError("ratio k must be at least 1")
        if self.input is None and self.generator is None:
            raise ConfigError("either input or generator must be given")
        if len(set(self.schema)) != len(self.schema):
            raise ConfigError("schema names must be unique")
        known = set(self.schema) | {"year", "gender", "adult", "after2004"}
        for label, names in (("candidates", self.candidates), ("originals", self.originals),
                             ("interactions", self.interactions)):
            bad = [n for n in names if n not in known]
            if bad:
                raise ConfigError(f"{label} reference unknown columns {bad}")
        matched = [n for n in self.originals if n in MATCHING_VARIABLES]
        if matched:
            raise ConfigError(f"matching variables cannot be modelled: {matched}")
        stray = [n for n in self.interactions if n not in self.originals]
        if stray:
            raise ConfigError(f"interactions without an original factor: {stray}")
        if self.threshold is not None and self.threshold < 0:
            raise ConfigError("threshold must be nonnegative")
        if self.conditional_mode not in ("flatten", "conditional"):
            raise ConfigError(f"unknown conditional_mode {self.conditional_mode!r}")
        if self.mixed_grouping not in ("nationality", "set_id", "person"):
            raise ConfigError("mixed_grouping must be nationality, set_id or person")
        if self.quadrature_points < 1 or self.quadrature_points % 2 == 0:
            raise ConfigError("quadrature_points must be a positive odd integer")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        try:
            rules = ConstraintSet.from_config(self.constraints).rules
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad constraint entry: {exc}") from None
        bad = [r.variable for r in rules if r.variable not in known]
        if bad:
            raise ConfigError(f"constraints reference unknown columns {bad}")
        if self.generator is not None:
            self.generator_config()

    def generator_config(self) -> GeneratorConfig:
        try:
            return GeneratorConfig.from_mapping(dict(self.generator, seed=self.generator.get("seed", self.seed)))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_mapping(cls, mapping: dict, base_dir=None) -> "PipelineConfig":
        names = {f.name for f in fields(cls)}
        extra = set(mapping) - names
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        values = dict(mapping)
        if base_dir is not None and values.get("input"):
            p = Path(values["input"])
            values["input"] = str(p if p.is_absolute() else Path(base_dir) / p)
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        return cls.from_mapping(read_config_file(path), base_dir=Path(path).parent)

    def to_dict(self) -> dict:
        return asdict(self)

    def constraint_set(self) -> ConstraintSet:
        return ConstraintSet.from_config(self.constraints)


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: PipelineConfig) -> str:
    """Short hash of the settings that determine results, plus the input bytes.

    The output directory, thread count and input path do not affect results
    and are left out; the input file contributes its content hash instead.
    """
    d = {k: v for k, v in config.to_dict().items() if k not in HASH_EXCLUDED}
    if config.input is not None:
        try:
            d["input_sha256"] = _file_sha256(config.input)
        except OSError as exc:
            raise OutputError(f"cannot read input {config.input}: {exc.strerror}") from None
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def resolve_threads(config: PipelineConfig) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return config.threads
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1")
    return n


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serialisable: {type(obj)}")


def _clean(value):
    """Replace non-finite floats by None so JSON stays strict."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


class Workspace:
    """An output directory whose artifacts all belong to one config hash."""

    def __init__(self, root, digest: str):
        self.root = Path(root)
        self.digest = digest
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {self.root}: {exc.strerror}") from None
        self.check_provenance()

    def path(self, key: str) -> Path:
        return self.root / ARTIFACTS.get(key, key)

    def declared_hash(self, path: Path) -> str | None:
        if path.suffix == ".json":
            try:
                return json.loads(path.read_text(encoding="utf-8")).get("config_hash")
            except (ValueError, AttributeError):
                return None
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
        marker = "config_hash="
        return first.split(marker, 1)[1].split()[0] if marker in first else None

    def check_provenance(self):
        names = set(ARTIFACTS.values()) | {MANIFEST, INCOMPLETE_MARKER}
        for path in sorted(self.root.iterdir()):
            if path.name not in names:
                continue
            if path.name == INCOMPLETE_MARKER:
                found = path.read_text(encoding="utf-8").split()[0] if path.stat().st_size else None
            else:
                found = self.declared_hash(path)
            if found != self.digest:
                raise OutputError(
                    f"{self.root} holds {path.name} from another configuration "
                    f"({found} != {self.digest}); use a fresh output directory"
                )

    def header(self) -> str:
        return f"config_hash={self.digest}"

    def write_json(self, key: str, payload: dict) -> Path:
        path = self.path(key)
        body = dict(_clean(payload), config_hash=self.digest)
        text = json.dumps(body, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"
        return self._write_text(path, text)

    def write_markdown(self, key: str, text: str) -> Path:
        return self._write_text(self.path(key), f"<!-- {self.header()} -->\n\n{text}")

    def _write_text(self, path: Path, text: str) -> Path:
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc.strerror}") from None
        return path

    def read_json(self, key: str) -> dict:
        path = self.path(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except OSError:
            raise OutputError(f"missing artifact {path}; run the earlier stage first") from None

    def require(self, key: str) -> Path:
        path = self.path(key)
        if not path.exists():
            raise OutputError(f"missing artifact {path}; run the earlier stage first")
        return path

    def mark_incomplete(self, stage: str, error: Exception):
        text = f"{self.digest}\nstage: {stage}\nerror: {type(error).__name__}: {error}\n"
        (self.root / INCOMPLETE_MARKER).write_text(text, encoding="utf-8")

    def clear_incomplete(self):
        (self.root / INCOMPLETE_MARKER).unlink(missing_ok=True)


class StageError(MatchedPairsError):
    """A typed pipeline error tagged with the stage that raised it."""

    def __init__(self, stage: str, error: MatchedPairsError):
        super().__init__(f"[{stage}] {error}")
        self.stage = stage
        self.error = error
        self.exit_code = error.exit_code


def _stage(name):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except MatchedPairsError as exc:
                raise StageError(name, exc) from exc
            except OSError as exc:
                raise StageError(name, OutputError(f"{exc.filename or ''}: {exc.strerror}")) from exc

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        run.stage = name
        return run

    return wrap


def simulate(config: GeneratorConfig, path, header_comment: str | None = None) -> Dataset:
    data = generate_dataset(config)
    try:
        write_dataset(data, path, header_comment)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from None
    return data


@_stage("validate")
def stage_validate(config: PipelineConfig, ws: Workspace) -> Dataset:
    """Load (or generate) the input and record its summary."""
    if config.input is not None:
        if not Path(config.input).exists():
            raise OutputError(f"input file {config.input} does not exist")
        data = load_dataset(config.input, config.schema, tuple(config.year_range))
    else:
        data = generate_dataset(config.generator_config())
        write_dataset(data, ws.path("data"), ws.header())
        missing = [c for c in config.schema if c not in data.schema]
        if missing:
            raise SchemaError(f"generated data lacks schema columns {missing}")
    ws.write_json("validation", {
        "n_records": len(data),
        "n_grants": int(data.column("outcome").sum()),
        "n_nationalities": int(np.unique(data.column("nationality")).size),
        "schema": list(data.schema),
        "recognition_rate": recognition_rate(data, by_year=False),
        "recognition_rate_by_year": {str(k): v for k, v in recognition_rate(data).items()},
    })
    return data


def _load_input(config: PipelineConfig, ws: Workspace) -> Dataset:
    if config.input is not None:
        return load_dataset(config.input, config.schema, tuple(config.year_range))
    generated = ws.path("data")
    if generated.exists():
        return load_dataset(generated, config.schema, tuple(config.year_range))
    return stage_validate(config, ws)


@_stage("select")
def stage_select(config: PipelineConfig, ws: Workspace, data: Dataset, threads: int = 1) -> SelectionTrace:
    trace = forward_select(
        data,
        config.candidates,
        random_group=config.selection_random_group,
        threshold=config.threshold,
        quadrature_points=config.quadrature_points,
        threads=threads,
    )
    ws.write_json("selection", trace.to_dict())
    trace.write_plot_csv(ws.path("deviance_plot"), ws.header())
    return trace


@_stage("score")
def stage_score(config: PipelineConfig, ws: Workspace, data: Dataset, selected=None):
    if selected is None:
        selected = ws.read_json("selection")["selected"]
    spec = MixedFitSpec(fixed=FitSpec(predictors=tuple(selected)), grouping=config.propensity_grouping,
                        quadrature_points=config.quadrature_points)
    model = compute_propensity(data, selected, config.propensity_grouping, spec)
    fit = model.fitted
    ws.write_json("propensity", {
        "variables": list(selected),
        "grouping": config.propensity_grouping,
        "names": fit.names,
        "coefficients": fit.coefficients,
        "std_errors": fit.std_errors,
        "sigma_u": fit.sigma_u,
        "sigma_u_se": fit.sigma_u_se,
        "boundary": fit.boundary,
        "log_likelihood": fit.log_likelihood,
        "converged": fit.converged,
        "gradient_max": fit.gradient_max,
        "n_obs": fit.n_obs,
        "n_groups": fit.n_groups,
        "predicted_effects": dict(sorted(fit.predicted_effects.items())),
    })
    scores = model.scores(data)
    with open(ws.path("scores"), "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {ws.header()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "score"])
        for rid, s in zip(data.column("id"), scores):
            w.writerow([int(rid), repr(float(s))])
    return model


def read_scores(path) -> dict[int, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        return {int(row["id"]): float(row["score"]) for row in reader}


@_stage("match")
def stage_match(config: PipelineConfig, ws: Workspace, data: Dataset, scores=None):
    if scores is None:
        scores = read_scores(ws.require("scores"))
    result = match_cases(data, scores, k=config.ratio, constraints=config.constraint_set(), caliper=config.caliper)
    write_matched_sets(result.sets, ws.path("matched_sets"), ws.header())
    summary = result.summary()
    # the same matching without constraints, so both counts are reported
    if config.constraints:
        free = match_cases(data, scores, k=config.ratio, constraints=ConstraintSet(), caliper=config.caliper)
        summary["unconstrained_n_sets"] = len(free.sets)
        summary["unconstrained_n_pairs"] = free.n_pairs
    summary["dropped_case_ids"] = result.dropped_case_ids
    ws.write_json("matching_summary", summary)
    if result.sets:
        rows = build_pair_rows(result.sets, data, config.originals)
        write_pair_rows(rows, config.originals, ws.path("pair_rows"), ws.header())
        balance = balance_check(result.sets, data, list(config.schema))
        balance.to_csv(ws.path("balance_csv"), float_format=None, lineterminator="\n")
        _prepend_comment(ws.path("balance_csv"), ws.header())
        ws.write_json("balance_json", {
            "variables": balance.reset_index().to_dict(orient="records"),
            "mean_abs_smd_before": float(balance["smd_before"].abs().mean()),
            "mean_abs_smd_after": float(balance["smd_after"].abs().mean()),
        })
        desc = describe_attributes(result.sets, data, config.originals, config.era)
        ws.write_json("descriptives_json", {"rows": desc.reset_index().to_dict(orient="records")})
        ws.write_markdown("descriptives_md", _descriptives_markdown(desc))
    return result


def _prepend_comment(path: Path, comment: str):
    body = path.read_text(encoding="utf-8")
    path.write_text(f"# {comment}\n{body}", encoding="utf-8")


def _descriptives_markdown(desc) -> str:
    from .paired import _label, markdown_table

    rows = [[_label(name, None), f"{r.case:.2f}", f"{r.control:.2f}", f"{r.case_x_era:.2f}", f"{r.control_x_era:.2f}"]
            for name, r in desc.iterrows()]
    return markdown_table(["Variable", "Case", "Control", "Case x After 2004", "Control x After 2004"], rows)


@_stage("fit")
def stage_fit(config: PipelineConfig, ws: Workspace, data: Dataset, sets=None):
    """Fit the conditional and mixed paired models on the matched sets."""
    if sets is None:
        sets = read_matched_sets(ws.require("matched_sets"))
    if not sets:
        raise FitError("no matched sets to fit")
    rows = build_pair_rows(sets, data, config.originals)
    rows, design = build_interaction_design(rows, config.originals, config.era, config.interactions)
    conditional = fit_conditional_pairs(rows, design.names, mode=config.conditional_mode)
    conditional.diagnostics["design"] = {
        "original_factors": list(design.original_factors),
        "interaction_factors": list(design.interaction_factors),
        "total_covariates": design.total_covariates,
    }
    ws.write_json("conditional_json", conditional.to_dict())
    ws.write_markdown("conditional_md", conditional.to_markdown())
    reports = {"conditional": conditional}
    if config.fit_mixed:
        stacked = stack_matched_sets(sets, data, design)
        spec = MixedFitSpec(grouping=config.mixed_grouping, quadrature_points=config.quadrature_points)
        mixed = fit_paired_mixed(stacked, design, config.mixed_grouping, spec)
        ws.write_json("mixed_json", mixed.to_dict())
        ws.write_markdown("mixed_md", mixed.to_markdown())
        reports["mixed"] = mixed
    return reports


@_stage("report")
def stage_report(config: PipelineConfig, ws: Workspace, reports=None):
    """Side-by-side coefficient table and factor-group odds."""
    if reports is None:
        reports = {"conditional": FitReport.from_dict(ws.read_json("conditional_json"))}
        if ws.path("mixed_json").exists():
            reports["mixed"] = FitReport.from_dict(ws.read_json("mixed_json"))
    conditional = reports["conditional"]
    mixed = reports.get("mixed", FitReport("mixed", []))
    ws.write_markdown("table", side_by_side_markdown(conditional, mixed))
    odds = {}
    for tag, report in reports.items():
        known = {r.name for r in report.rows}
        groups = {g: [m for m in members if m in known] for g, members in config.factor_groups.items()}
        odds[tag] = group_odds_summary(report, groups, config.significant_only)
    odds["published_reference"] = replication.PUBLISHED_GROUP_ODDS
    ws.write_json("group_odds", odds)
    return odds


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("numpy", "scipy", "pandas"):
        out[dist] = metadata.version(dist)
    from . import __version__

    out["matchedpairs"] = __version__
    return out


def write_manifest(config: PipelineConfig, ws: Workspace, stages: list[str]) -> Path:
    files = {}
    for name in sorted(ARTIFACTS.values()):
        path = ws.root / name
        if path.exists():
            files[name] = _file_sha256(path)
    return ws.write_json(MANIFEST, {
        "config": {k: v for k, v in config.to_dict().items() if k not in ("output_dir", "threads")},
        "seed": config.seed,
        "stages": stages,
        "versions": _versions(),
        "artifacts": files,
    })


@dataclass
class RunResult:
    exit_code: int
    output_dir: Path
    config_hash: str
    stage: str | None = None
    error: str | None = None
    artifacts: dict = field(default_factory=dict)


def open_workspace(config: PipelineConfig) -> Workspace:
    return Workspace(config.output_dir, config_hash(config))


def run_pipeline(config: PipelineConfig, raise_errors: bool = False) -> RunResult:
    """validate, select, score, match, fit and report, then write the manifest.

    Returns a :class:`RunResult` whose ``exit_code`` is 0 on success or the
    typed code of the failing stage. On failure an ``INCOMPLETE`` marker
    naming the stage is left in the output directory and no manifest is
    written. An output directory holding another configuration's artifacts
    is rejected with the I/O code before anything is written to it.
    """
    digest = config_hash(config)
    try:
        ws = Workspace(config.output_dir, digest)
    except OutputError as exc:
        # a directory owned by another configuration is left untouched
        if raise_errors:
            raise StageError("workspace", exc) from exc
        log.error("%s", exc)
        return RunResult(exc.exit_code, Path(config.output_dir), digest, "workspace", str(exc))
    (ws.root / MANIFEST).unlink(missing_ok=True)
    threads = resolve_threads(config)
    done = []
    try:
        data = stage_validate(config, ws)
        done.append("validate")
        trace = stage_select(config, ws, data, threads)
        done.append("select")
        model = stage_score(config, ws, data, trace.selected)
        done.append("score")
        scores = dict(zip((int(i) for i in data.column("id")), model.scores(data)))
        result = stage_match(config, ws, data, scores)
        done.append("match")
        reports = stage_fit(config, ws, data, result.sets)
        done.append("fit")
        stage_report(config, ws, reports)
        done.append("report")
        ws.clear_incomplete()
        write_manifest(config, ws, done)
    except StageError as exc:
        ws.mark_incomplete(exc.stage, exc.error)
        if raise_errors:
            raise
        log.error("%s", exc)
        return RunResult(exc.exit_code, ws.root, digest, exc.stage, str(exc.error))
    files = {name: ws.root / name for name in sorted(set(ARTIFACTS.values()) | {MANIFEST}) if (ws.root / name).exists()}
    return RunResult(0, ws.root, digest, artifacts=files)
