"""Command line entry point: ``matchedpairs <subcommand> [options]``.

Exit codes: 0 ok, 2 invalid input, 3 fitting failure, 4 I/O, 5 configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, MatchedPairsError, OutputError
from .paired import FitReport, side_by_side_markdown
from .pipeline import (
    PipelineConfig,
    StageError,
    open_workspace,
    read_config_file,
    resolve_threads,
    run_pipeline,
    simulate,
    stage_fit,
    stage_match,
    stage_report,
    stage_score,
    stage_select,
    stage_validate,
    _load_input,
)
from .synth import GeneratorConfig

log = logging.getLogger("matchedpairs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def _common(p, needs_format=True):
    p.add_argument("--config", help="JSON or TOML pipeline configuration")
    p.add_argument("--input", help="input CSV (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--ratio", type=int, help="controls per case, k")
    p.add_argument("--threshold", type=float, help="selection deviance-gain cutoff")
    p.add_argument("--seed", type=int, help="seed for synthetic input")
    if needs_format:
        p.add_argument("--format", choices=("json", "md", "csv"), default="json", help="stdout format")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="matchedpairs", description="Matched case-control analysis of binary outcomes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="write a synthetic dataset")
    sim.add_argument("--config", help="generator settings, or a pipeline config with a 'generator' table")
    sim.add_argument("--out", required=True, help="CSV file to write")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--records", type=int, help="number of records")
    sim.add_argument("--format", choices=("json", "md", "csv"), default="json")
    sim.add_argument("--quiet", action="store_true")

    for name, text in (
        ("validate", "check an input file against the schema"),
        ("select", "forward deviance selection of propensity terms"),
        ("score", "fit the propensity model and score every record"),
        ("match", "greedy 1:k matching within exact strata"),
        ("fit", "fit the conditional and mixed paired models"),
        ("report", "print the side-by-side coefficient table"),
        ("run", "every stage in order, then the manifest"),
    ):
        _common(sub.add_parser(name, help=text))
    return parser


def load_config(args) -> PipelineConfig:
    """Config file first, then command-line overrides."""
    mapping, base = {}, None
    if args.config:
        mapping = read_config_file(args.config)
        base = Path(args.config).parent
    if args.input:
        # relative to the working directory, not to the config file
        mapping["input"] = str(Path(args.input).resolve())
        mapping.pop("generator", None)
    if args.out:
        mapping["output_dir"] = args.out
    if args.ratio is not None:
        mapping["ratio"] = args.ratio
    if args.threshold is not None:
        mapping["threshold"] = args.threshold
    if args.seed is not None:
        mapping["seed"] = args.seed
        if mapping.get("generator") is not None:
            mapping["generator"] = dict(mapping["generator"], seed=args.seed)
    if "input" not in mapping and "generator" not in mapping:
        raise ConfigError("give --input or a --config naming an input or a generator")
    return PipelineConfig.from_mapping(mapping, base)


def _emit(args, payload: dict, markdown: str | None = None, rows: list[dict] | None = None):
    if args.quiet:
        return
    if args.format == "md" and markdown is not None:
        sys.stdout.write(markdown)
    elif args.format == "csv" and rows:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        sys.stdout.write(buf.getvalue())
    else:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _simulate(args):
    mapping = {}
    if args.config:
        mapping = read_config_file(args.config)
        if "generator" in mapping:
            mapping = dict(mapping["generator"], seed=mapping["generator"].get("seed", mapping.get("seed", 0)))
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.records is not None:
        mapping["n_records"] = args.records
    try:
        config = GeneratorConfig.from_mapping(mapping)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    data = simulate(config, args.out)
    _emit(args, {"path": args.out, "n_records": len(data), "n_grants": int(data.column("outcome").sum()),
                 "seed": config.seed})
    return 0


def _run_stage(args):
    config = load_config(args)
    if args.command == "run":
        result = run_pipeline(config)
        if result.exit_code:
            print(f"error in stage {result.stage}: {result.error}", file=sys.stderr)
            return result.exit_code
        _emit(args, {"output_dir": str(result.output_dir), "config_hash": result.config_hash,
                     "artifacts": sorted(result.artifacts)})
        return 0

    ws = open_workspace(config)
    if args.command == "validate":
        stage_validate(config, ws)
        _emit(args, ws.read_json("validation"))
        return 0
    if args.command == "report":
        payload = stage_report(config, ws)
        conditional = FitReport.from_dict(ws.read_json("conditional_json"))
        mixed = FitReport.from_dict(ws.read_json("mixed_json")) if ws.path("mixed_json").exists() else FitReport("mixed", [])
        rows = [dict(model=rep.model, **r.__dict__) for rep in (conditional, mixed) for r in rep.rows]
        _emit(args, {"conditional": conditional.to_dict(), "mixed": mixed.to_dict(), "group_odds": payload},
              side_by_side_markdown(conditional, mixed), rows)
        return 0

    data = _load_input(config, ws)
    if args.command == "select":
        trace = stage_select(config, ws, data, resolve_threads(config))
        rows = [{"step": s, "variable": v, "deviance": d} for s, v, d in trace.plot_rows()]
        _emit(args, trace.to_dict(), rows=rows)
    elif args.command == "score":
        stage_score(config, ws, data)
        _emit(args, ws.read_json("propensity"))
    elif args.command == "match":
        stage_match(config, ws, data)
        _emit(args, ws.read_json("matching_summary"))
    elif args.command == "fit":
        reports = stage_fit(config, ws, data)
        _emit(args, {k: r.to_dict() for k, r in reports.items()},
              "\n".join(r.to_markdown() for r in reports.values()))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "simulate":
            return _simulate(args)
        return _run_stage(args)
    except StageError as exc:
        print(f"error in stage {exc.stage}: {exc.error}", file=sys.stderr)
        return exc.exit_code
    except MatchedPairsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return OutputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
