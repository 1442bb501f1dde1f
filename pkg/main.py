import argparse
import json
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from engine import Engine
from errors import ConfigError, ExplorationAborted, RuleEngineError
from explorer import ExplorationReport, explore_parallel, export_report
from logging_config import setup_logging
from models import (
    CompileSummaryDocument,
    Mode,
    Program,
    RunConfig,
    Status,
    Verdict,
    normalize_value,
    parse_label,
    render_value,
)
from pc_model import FAMILY_LABELS, agent_rulebases, build_model
from rule_dsl import format_program, parse_program
from settings import load_config, load_directives, output_path
from specializer import SpecializedProgram, describe_plan, predict_cost, specialize, trace_provenance

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_COUNTEREXAMPLE = 2

GENERATOR_FLAGS = (
    ("producers", int),
    ("consumers", int),
    ("horizon", int),
    ("gamma", str),
    ("initial_prices", str),
    ("base_demand", str),
    ("production", str),
    ("initial_level", str),
    ("choice_transitions", str),
)


# Loading


def _generator_overrides(args) -> Optional[Dict[str, object]]:
    values = {name: getattr(args, name, None) for name, _ in GENERATOR_FLAGS}
    values = {k: v for k, v in values.items() if v is not None}
    return values or None


def _config(args, **extra) -> RunConfig:
    overrides = {"model": getattr(args, "model", None), "generator": _generator_overrides(args)}
    for key in ("directives", "mode", "theorem", "format", "output", "parallelism"):
        overrides[key] = getattr(args, key, None)
    for key in ("instrument", "keep_mapping", "generic", "timing"):
        if getattr(args, key, False):
            overrides[key] = True
    overrides.update(extra)
    return load_config(getattr(args, "config", None), overrides)


def load_program(config: RunConfig) -> Tuple[Program, Dict[str, Tuple[str, ...]]]:
    """The configured model program and its split directives"""
    if config.model is not None:
        try:
            text = Path(config.model).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read model {config.model}: {e}") from None
        program = parse_program(text)
        directives: Dict[str, Tuple[str, ...]] = {}
    else:
        generated = build_model(config.generator)
        program, directives = generated.program, dict(generated.directives)
    if config.directives:
        directives.update(load_directives(config.directives))
    return program, directives


def _prepare(config: RunConfig) -> Tuple[Program, Optional[SpecializedProgram]]:
    program, directives = load_program(config)
    if config.generic:
        return program, None
    return program, specialize(program, directives)


# Commands


def compile_summary(split: SpecializedProgram) -> CompileSummaryDocument:
    factors = predict_cost(split.source, split.directives)
    return CompileSummaryDocument(
        ruleCounts={rule: {"generic": 1, "split": split.counts[rule]} for rule in split.counts},
        directives={rule: list(dims) for rule, dims in split.directives.items()},
        predictedFactors=factors,
        total={"generic": len(split.source.rules), "split": split.total},
    )


def compile_table(split: SpecializedProgram) -> List[str]:
    """Rule-count rows, market families first in their table order"""
    order = list(FAMILY_LABELS)
    rows = describe_plan(split)
    rows.sort(key=lambda row: order.index(row[0]) if row[0] in order else len(order))
    lines = []
    for rule, generic, count in rows:
        dims = ", ".join(split.directives[rule]) or "none"
        lines.append(f"{FAMILY_LABELS.get(rule, rule)}: {generic} → {count} ({dims})")
    lines.append(f"Total: {len(split.source.rules)} → {split.total}")
    return lines


def cmd_compile(args) -> int:
    config = _config(args)
    program, directives = load_program(config)
    split = specialize(program, directives)
    stem = Path(config.model).stem if config.model else "pc_model"
    rules_path = output_path(config, f"{stem}.split.rules")
    rules_path.write_text(format_program(split.program), encoding="utf-8")
    summary = compile_summary(split).model_dump(mode="json", by_alias=True)
    sidecar = output_path(config, f"{stem}.compile.json")
    sidecar.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    for line in compile_table(split):
        print(line)
    print("Agent rule bases:")
    for owner, rules in agent_rulebases(program).items():
        print(f"  {owner}: {', '.join(rules)}")
    logger.info(f"Wrote {rules_path} and {sidecar}")
    return EXIT_OK


def _write_reports(config: RunConfig, report: ExplorationReport) -> List[Path]:
    formats = ["json", "csv"] if config.format == "both" else [config.format]
    written = []
    for fmt in formats:
        path = output_path(config, f"report.{fmt}")
        path.write_bytes(export_report(report, fmt, include_diagnostics=config.timing))
        written.append(path)
    return written


def _run_exploration(config: RunConfig, program: Program, split: Optional[SpecializedProgram],
                     instrument: bool) -> ExplorationReport:
    target = split.program if split is not None else program
    provenance = split.provenance if split is not None else None
    return explore_parallel(target, config.theorem, config.mode, provenance, config.keep_mapping,
                            instrument, config.parallelism)


def cmd_explore(args) -> int:
    config = _config(args)
    program, split = _prepare(config)
    try:
        report = _run_exploration(config, program, split, config.instrument)
    except ExplorationAborted as e:
        _write_reports(config, e.report)
        raise
    paths = _write_reports(config, report)
    line = f"{report.verdict.value} completed={report.completed} pruned={report.pruned}"
    if report.counterexample_label is not None:
        line += f" counterexample={report.counterexample_label}"
    print(line)
    logger.info(f"Reports written: {', '.join(str(p) for p in paths)}")
    return EXIT_COUNTEREXAMPLE if report.verdict is Verdict.COUNTEREXAMPLE else EXIT_OK


def scan_curves(report: ExplorationReport) -> Dict[str, List[Tuple[int, Fraction]]]:
    """Per generic rule, scanned candidates per evaluation at each STI"""
    if report.scans is None:
        return {}
    rules = sorted({rule for rule, _ in report.scans.evaluations})
    return {rule: report.scans.curve(rule) for rule in rules}


def curve_shape(points: List[Tuple[int, Fraction]]) -> str:
    values = [value for sti, value in points if sti > 0]
    if all(a == b for a, b in zip(values, values[1:])):
        return "flat"
    if all(a < b for a, b in zip(values, values[1:])):
        return "increasing"
    return "mixed"


def scan_shape_problems(generic: Dict[str, List[Tuple[int, Fraction]]],
                        split: Optional[Dict[str, List[Tuple[int, Fraction]]]] = None) -> List[str]:
    """Generic curves must rise with the STI and split curves must stay flat"""
    problems = []
    for rule, points in generic.items():
        values = [value for sti, value in points if sti > 0]
        if len(values) > 1 and (any(b < a for a, b in zip(values, values[1:])) or values[-1] == values[0]):
            problems.append(f"generic {rule} scans do not rise with the STI")
    for rule, points in (split or {}).items():
        shape = curve_shape(points)
        if shape != "flat":
            problems.append(f"split {rule} scans are {shape}, expected flat")
    return problems


def _bench_entry(wall_time: float, curves: Dict[str, List[Tuple[int, Fraction]]]) -> Dict[str, object]:
    return {
        "wall_time": round(wall_time, 6),
        "scans": {rule: [[sti, render_value(normalize_value(v))] for sti, v in points] for rule, points in curves.items()},
        "shapes": {rule: curve_shape(points) for rule, points in curves.items()},
    }


def _timed(config: RunConfig, program: Program, split: Optional[SpecializedProgram]):
    started = time.perf_counter()
    report = _run_exploration(config, program, split, True)
    return report, time.perf_counter() - started


def cmd_bench(args) -> int:
    config = _config(args, instrument=True)
    program, directives = load_program(config)
    generic, generic_time = _timed(config, program, None)
    generic_curves = scan_curves(generic)
    split_curves = None
    result: Dict[str, object] = {"generic": _bench_entry(generic_time, generic_curves)}
    print(f"generic: {generic_time:.3f}s")

    if not args.generic_only:
        split, split_time = _timed(config, program, specialize(program, directives))
        if export_report(generic, "json") != export_report(split, "json"):
            raise RuleEngineError("generic and split explorations produced different reports")
        split_curves = scan_curves(split)
        result["split"] = _bench_entry(split_time, split_curves)
        result["speedup"] = round(generic_time / split_time, 3) if split_time > 0 else None
        print(f"split: {split_time:.3f}s speedup={result['speedup']}")

    for kind in ("generic", "split"):
        for rule, shape in result.get(kind, {}).get("shapes", {}).items():
            print(f"{kind} {rule}: scans {shape}")
    path = output_path(config, "bench.json")
    path.write_text(json.dumps(result, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    problems = scan_shape_problems(generic_curves, split_curves)
    if problems:
        raise RuleEngineError("; ".join(problems))
    return EXIT_OK


def cmd_trace(args) -> int:
    config = _config(args)
    program, split = _prepare(config)
    try:
        indices = parse_label(args.label)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    target = split.program if split is not None else program
    engine = Engine(target, split.provenance if split is not None else None, tracer=print)
    record = engine.replay(indices)

    print(f"label {record.label} {record.status.value}")
    if record.status is Status.PRUNED:
        print(f"pruned by {record.pruned_by}")
        if split is not None:
            print(f"  {trace_provenance(split, record.pruned_by.rule)}")
    database = record.database
    families = sorted({database.locate(f.predicate, f.args)[0] for f in database.facts()})
    for sti in range(1, target.horizon + 1):
        print(f"STI {sti}")
        for family in families:
            for fact in database.at(family, sti):
                print(f"  {fact}")
        for name, values in sorted(record.observables.items()):
            print(f"  {name} = {render_value(values[sti - 1])}")
    return EXIT_OK


def cmd_pc_model(args) -> int:
    config = _config(args)
    generated = build_model(config.generator)
    text = format_program(generated.program)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        logger.info(f"Wrote model to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# Argument parsing


def _add_model_options(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="YAML file with run configuration")
    parser.add_argument("--model", help=".rules model file (default: generated market model)")
    parser.add_argument("--directives", help="YAML file mapping rule ids to split dimensions")
    parser.add_argument("--output", help="directory for written files")
    _add_generator_options(parser)


def _add_generator_options(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("market generator")
    for name, kind in GENERATOR_FLAGS:
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)


def _add_explore_options(parser: argparse.ArgumentParser):
    parser.add_argument("--mode", choices=[m.value for m in Mode])
    parser.add_argument("--theorem", help="declared theorem to check")
    parser.add_argument("--format", choices=["json", "csv", "both"])
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--keep-mapping", dest="keep_mapping", action="store_true")
    parser.add_argument("--timing", action="store_true", help="include wall time and scans in reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rule-explorer", description="Exhaustive rule-based trajectory explorer")
    commands = parser.add_subparsers(dest="command", required=True)

    compile_parser = commands.add_parser("compile", help="split rules by time and agent")
    _add_model_options(compile_parser)
    compile_parser.set_defaults(handler=cmd_compile)

    explore_parser = commands.add_parser("explore", help="explore every trajectory and check a theorem")
    _add_model_options(explore_parser)
    _add_explore_options(explore_parser)
    explore_parser.add_argument("--instrument", action="store_true", help="count candidate scans")
    explore_parser.add_argument("--generic", action="store_true", help="explore the unspecialized program")
    explore_parser.set_defaults(handler=cmd_explore)

    bench_parser = commands.add_parser("bench", help="compare generic and split exploration")
    _add_model_options(bench_parser)
    _add_explore_options(bench_parser)
    bench_parser.add_argument("--generic-only", dest="generic_only", action="store_true")
    bench_parser.set_defaults(handler=cmd_bench)

    trace_parser = commands.add_parser("trace", help="replay one trajectory")
    trace_parser.add_argument("label", help="dot-separated selection indices, '-' for none")
    _add_model_options(trace_parser)
    trace_parser.add_argument("--generic", action="store_true")
    trace_parser.set_defaults(handler=cmd_trace)

    model_parser = commands.add_parser("pc-model", help="write the producer-consumer model")
    model_parser.add_argument("--config", help="YAML file with run configuration")
    model_parser.add_argument("--out", help="destination .rules file (default: stdout)")
    _add_generator_options(model_parser)
    model_parser.set_defaults(handler=cmd_pc_model)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except RuleEngineError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
