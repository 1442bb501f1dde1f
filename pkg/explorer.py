# explorer.py

import asyncio
import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from engine import Engine, Frontier, ScanCounter
from errors import ConfigError, EnvelopeShapeError, ExplorationAborted, ModelError, ObservableError, RuleEngineError
from logging_config import ExplorerLogger
from models import (
    WITNESS_PREDICATE,
    BoundRow,
    Constant,
    CounterexampleDocument,
    Mode,
    Program,
    Provenance,
    RatioDocument,
    ReportDocument,
    Status,
    Theorem,
    TrajectoryRecord,
    Value,
    Verdict,
    normalize_value,
    render_label,
    render_value,
    value_key,
)

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 4096

Label = Tuple[int, ...]


def check_theorem(record: TrajectoryRecord, theorem: Theorem) -> bool:
    """True iff the theorem's comparison chain holds over the record's observable"""
    values = record.observables.get(theorem.observable)
    if values is None:
        raise ObservableError(theorem.observable, theorem.first, f"unknown observable {theorem.observable}")
    if not 1 <= theorem.first <= theorem.last <= len(values):
        raise ObservableError(theorem.observable, theorem.first,
                              f"theorem {theorem.name} range {theorem.first}..{theorem.last} "
                              f"is not within 1..{len(values)}")
    chain = []
    for sti in range(theorem.first, theorem.last + 1):
        value = values[sti - 1]
        if value is None:
            raise ObservableError(theorem.observable, sti)
        chain.append(value)
    return all(theorem.relation.holds(before, after) for before, after in zip(chain, chain[1:]))


# Envelopes


@dataclass(frozen=True)
class Bound:
    min: Value
    max: Value
    argmin: Label
    argmax: Label

    def merge(self, other: Optional["Bound"]) -> "Bound":
        if other is None:
            return self
        low, high = value_key(self.min), value_key(other.min)
        if low < high or (low == high and self.argmin <= other.argmin):
            minimum, argmin = self.min, self.argmin
        else:
            minimum, argmin = other.min, other.argmin
        low, high = value_key(self.max), value_key(other.max)
        if low > high or (low == high and self.argmax <= other.argmax):
            maximum, argmax = self.max, self.argmax
        else:
            maximum, argmax = other.max, other.argmax
        return Bound(minimum, maximum, argmin, argmax)


@dataclass(frozen=True)
class Envelope:
    """Per-STI bounds of each observable over the completed trajectories seen so far"""

    horizon: int
    # observable -> one Bound (or None before any value) per STI 1..horizon
    bounds: Mapping[str, Tuple[Optional[Bound], ...]]

    @classmethod
    def empty(cls, observables: Iterable[str], horizon: int) -> "Envelope":
        return cls(horizon, {name: (None,) * horizon for name in sorted(observables)})

    @classmethod
    def of(cls, record: TrajectoryRecord, horizon: int) -> "Envelope":
        label = record.label.indices
        bounds = {}
        for name, values in sorted(record.observables.items()):
            bounds[name] = tuple(None if v is None else Bound(v, v, label, label) for v in values)
        return cls(horizon, bounds)

    @property
    def shape(self) -> Tuple[int, Tuple[str, ...]]:
        return self.horizon, tuple(sorted(self.bounds))

    def is_empty(self) -> bool:
        return all(b is None for row in self.bounds.values() for b in row)

    def contains(self, record: TrajectoryRecord) -> bool:
        for name, values in record.observables.items():
            for bound, value in zip(self.bounds[name], values):
                if value is None:
                    continue
                if bound is None or not value_key(bound.min) <= value_key(value) <= value_key(bound.max):
                    return False
        return True


def envelope_merge(a: Envelope, b: Envelope) -> Envelope:
    """Componentwise min of minima and max of maxima; ties keep the smaller label"""
    if a.shape != b.shape:
        raise EnvelopeShapeError(f"cannot merge envelopes of shape {a.shape} and {b.shape}")
    merged = {}
    for name in sorted(a.bounds):
        row = []
        for left, right in zip(a.bounds[name], b.bounds[name]):
            row.append(right if left is None else left.merge(right))
        merged[name] = tuple(row)
    return Envelope(a.horizon, merged)


@dataclass(frozen=True)
class RatioStats:
    """Extreme step ratios v(t+1)/v(t) of one observable"""

    min: Optional[Fraction] = None
    max: Optional[Fraction] = None

    def observe(self, values: Sequence[Optional[Value]]) -> "RatioStats":
        low, high = self.min, self.max
        for before, after in zip(values, values[1:]):
            if before is None or after is None or isinstance(before, str) or isinstance(after, str) or before == 0:
                continue
            ratio = Fraction(after) / Fraction(before)
            low = ratio if low is None else min(low, ratio)
            high = ratio if high is None else max(high, ratio)
        return RatioStats(low, high)

    def merge(self, other: "RatioStats") -> "RatioStats":
        lows = [v for v in (self.min, other.min) if v is not None]
        highs = [v for v in (self.max, other.max) if v is not None]
        return RatioStats(min(lows) if lows else None, max(highs) if highs else None)


# Accumulation


@dataclass
class _Partial:
    """What one subtree contributes to a report"""

    completed: int = 0
    pruned: int = 0
    envelope: Optional[Envelope] = None
    ratios: Dict[str, RatioStats] = field(default_factory=dict)
    counterexample: Optional[Tuple[Label, Dict[str, Tuple[Optional[Value], ...]]]] = None
    mapping: Optional[Dict[Label, Dict[str, Tuple[Optional[Value], ...]]]] = None
    scans: Optional[ScanCounter] = None
    error: Optional[RuleEngineError] = None

    def merge(self, other: "_Partial") -> "_Partial":
        envelope = self.envelope if other.envelope is None else (
            other.envelope if self.envelope is None else envelope_merge(self.envelope, other.envelope)
        )
        ratios = dict(self.ratios)
        for name, stats in other.ratios.items():
            ratios[name] = ratios[name].merge(stats) if name in ratios else stats
        mapping = None
        if self.mapping is not None or other.mapping is not None:
            mapping = dict(self.mapping or {})
            mapping.update(other.mapping or {})
        scans = self.scans
        if other.scans is not None:
            scans = other.scans if scans is None else scans.merge(other.scans)
        return _Partial(
            self.completed + other.completed,
            self.pruned + other.pruned,
            envelope,
            ratios,
            self.counterexample or other.counterexample,
            mapping,
            scans,
            self.error or other.error,
        )


def _witnessed(program: Program, theorem: Optional[Theorem]) -> bool:
    """Whether the program derives the in-model witness for this theorem"""
    if theorem is None:
        return False
    for rule in program.rules:
        for atom in rule.head:
            if atom.predicate == WITNESS_PREDICATE and atom.args == (Constant(theorem.name),):
                return True
    return False


class _Collector:
    def __init__(self, program: Program, theorem: Optional[Theorem], mode: Mode, keep_mapping: bool):
        self.program = program
        self.theorem = theorem
        self.mode = mode
        self.witnessed = _witnessed(program, theorem)
        self.partial = _Partial(
            envelope=Envelope.empty((o.name for o in program.observables), program.horizon),
            mapping={} if keep_mapping else None,
        )

    def add(self, record: TrajectoryRecord) -> bool:
        """Fold one leaf in; False once refute mode has its counterexample"""
        partial = self.partial
        if record.status is Status.PRUNED:
            partial.pruned += 1
            return True
        partial.completed += 1
        partial.envelope = envelope_merge(partial.envelope, Envelope.of(record, self.program.horizon))
        for name, values in record.observables.items():
            partial.ratios[name] = partial.ratios.get(name, RatioStats()).observe(values)
        if partial.mapping is not None:
            partial.mapping[record.label.indices] = dict(record.observables)
        if (partial.completed + partial.pruned) % PROGRESS_EVERY == 0:
            ExplorerLogger.log_progress(partial.completed, partial.pruned)
        if self.theorem is None:
            return True
        satisfied = check_theorem(record, self.theorem)
        record.theorem_satisfied = satisfied
        if self.witnessed and (self.theorem.name in record.witnesses) != satisfied:
            raise ModelError(
                f"in-model check of {self.theorem.name} disagrees with the observable chain at label {record.label}"
            )
        if not satisfied and partial.counterexample is None:
            partial.counterexample = (record.label.indices, dict(record.observables))
            ExplorerLogger.log_counterexample(str(record.label), self.theorem.name)
            if self.mode is Mode.REFUTE:
                return False
        return True


def _run(engine: Engine, collector: _Collector, prefix: Label = ()) -> _Partial:
    try:
        for record in engine.enumerate(prefix=prefix):
            if not collector.add(record):
                break
    except RuleEngineError as e:
        collector.partial.error = e
    collector.partial.scans = engine.scans
    return collector.partial


def _explore_prefix(program: Program, provenance: Optional[Dict[str, Provenance]], theorem: Optional[Theorem],
                    mode: Mode, keep_mapping: bool, instrument: bool, prefix: Label) -> _Partial:
    """Worker entry point: explore the subtree below one label prefix"""
    engine = Engine(program, provenance, instrument=instrument)
    return _run(engine, _Collector(program, theorem, mode, keep_mapping), prefix)


# Reports


@dataclass
class ExplorationReport:
    verdict: Verdict
    mode: Mode
    theorem: Optional[str]
    completed: int
    pruned: int
    envelope: Envelope
    ratios: Dict[str, RatioStats]
    counterexample: Optional[Tuple[Label, Dict[str, Tuple[Optional[Value], ...]]]] = None
    mapping: Optional[Dict[Label, Dict[str, Tuple[Optional[Value], ...]]]] = None
    wall_time: float = 0.0
    scans: Optional[ScanCounter] = None
    valid: bool = True

    @property
    def counterexample_label(self) -> Optional[str]:
        return render_label(self.counterexample[0]) if self.counterexample else None


def _report(partial: _Partial, theorem: Optional[Theorem], mode: Mode, started: float) -> ExplorationReport:
    if theorem is None:
        verdict = Verdict.SURVEYED
    elif partial.counterexample is not None:
        verdict = Verdict.COUNTEREXAMPLE
    else:
        verdict = Verdict.NECESSARY
    report = ExplorationReport(
        verdict=verdict,
        mode=mode,
        theorem=theorem.name if theorem else None,
        completed=partial.completed,
        pruned=partial.pruned,
        envelope=partial.envelope,
        ratios=partial.ratios,
        counterexample=partial.counterexample,
        mapping=partial.mapping,
        wall_time=time.perf_counter() - started,
        scans=partial.scans,
        valid=partial.error is None,
    )
    if partial.error is not None:
        ExplorerLogger.log_error("explore", partial.error)
        raise ExplorationAborted(report, partial.error) from partial.error
    ExplorerLogger.log_verdict(verdict.value, report.completed, report.pruned, report.wall_time)
    return report


def _checked_theorem(program: Program, theorem: Theorem) -> Theorem:
    if theorem.observable not in {o.name for o in program.observables}:
        raise ConfigError(f"theorem {theorem.name} references unknown observable {theorem.observable}")
    if not 1 <= theorem.first < theorem.last <= program.horizon:
        raise ConfigError(f"theorem {theorem.name} range {theorem.first}..{theorem.last} "
                          f"is not within 1..{program.horizon}")
    return theorem


def _resolve_theorem(program: Program, theorem, mode: Mode) -> Optional[Theorem]:
    if mode is Mode.SURVEY:
        return None
    if isinstance(theorem, Theorem):
        return _checked_theorem(program, theorem)
    if theorem is None:
        if len(program.theorems) != 1:
            raise RuleEngineError(f"{mode.value} mode needs a theorem; the program declares {len(program.theorems)}")
        return program.theorems[0]
    try:
        return program.theorem(theorem)
    except KeyError:
        raise RuleEngineError(f"unknown theorem {theorem}") from None


def explore(program: Program, theorem=None, mode: Mode = Mode.PROVE,
            provenance: Optional[Dict[str, Provenance]] = None, keep_mapping: bool = False,
            instrument: bool = False) -> ExplorationReport:
    """Walk every trajectory, check the theorem and accumulate the envelope.

    `theorem` is a Theorem, a declared theorem name, or None for the
    program's only theorem. Survey mode ignores it.
    """
    mode = Mode(mode)
    theorem = _resolve_theorem(program, theorem, mode)
    ExplorerLogger.log_start(mode.value, theorem.name if theorem else None)
    started = time.perf_counter()
    engine = Engine(program, provenance, instrument=instrument)
    partial = _run(engine, _Collector(program, theorem, mode, keep_mapping))
    return _report(partial, theorem, mode, started)


def _frontier(program: Program, provenance, target: int) -> List[object]:
    """Label prefixes (and leaves above them) deep enough to give `target` work items"""
    engine = Engine(program, provenance)
    depth = 1
    while True:
        items = []
        for item in engine.enumerate(max_depth=depth, snapshots=True):
            items.append(item)
        frontier = [item for item in items if isinstance(item, Frontier)]
        if not frontier or len(items) >= target:
            return items
        depth += 1


async def explore_async(program: Program, theorem=None, mode: Mode = Mode.PROVE,
                        provenance: Optional[Dict[str, Provenance]] = None, keep_mapping: bool = False,
                        instrument: bool = False, parallelism: int = 2) -> ExplorationReport:
    """Explore disjoint subtrees in a process pool and merge them in label order.

    The result is identical to `explore` for any degree of parallelism.
    """
    mode = Mode(mode)
    theorem = _resolve_theorem(program, theorem, mode)
    ExplorerLogger.log_start(mode.value, theorem.name if theorem else None, parallelism)
    started = time.perf_counter()
    items = _frontier(program, provenance, 4 * parallelism)

    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        pending = []
        for item in items:
            if isinstance(item, Frontier):
                pending.append(loop.run_in_executor(
                    pool, _explore_prefix, program, provenance, theorem, mode, keep_mapping, instrument, item.prefix
                ))
            else:
                pending.append(None)
        done = await asyncio.gather(*(p for p in pending if p is not None))

    results = iter(done)
    merged = _Partial(
        envelope=Envelope.empty((o.name for o in program.observables), program.horizon),
        mapping={} if keep_mapping else None,
    )
    for item, task in zip(items, pending):
        if task is None:
            # a leaf above the frontier depth
            collector = _Collector(program, theorem, mode, keep_mapping)
            try:
                collector.add(item)
            except RuleEngineError as e:
                collector.partial.error = e
            part = collector.partial
        else:
            part = next(results)
        merged = merged.merge(part)
        if merged.error is not None:
            break
        if mode is Mode.REFUTE and merged.counterexample is not None:
            break
    return _report(merged, theorem, mode, started)


def explore_parallel(program: Program, theorem=None, mode: Mode = Mode.PROVE,
                     provenance: Optional[Dict[str, Provenance]] = None, keep_mapping: bool = False,
                     instrument: bool = False, parallelism: int = 1) -> ExplorationReport:
    if parallelism <= 1:
        return explore(program, theorem, mode, provenance, keep_mapping, instrument)
    return asyncio.run(explore_async(program, theorem, mode, provenance, keep_mapping, instrument, parallelism))


# Export


def _render(value: Optional[Value]) -> Optional[str]:
    return None if value is None else render_value(normalize_value(value))


def report_document(report: ExplorationReport, include_diagnostics: bool = False) -> ReportDocument:
    envelope = {}
    for name, row in sorted(report.envelope.bounds.items()):
        envelope[name] = [
            BoundRow(sti=sti) if bound is None else BoundRow(
                sti=sti,
                min=_render(bound.min),
                max=_render(bound.max),
                argmin=render_label(bound.argmin),
                argmax=render_label(bound.argmax),
            )
            for sti, bound in enumerate(row, start=1)
        ]
    counterexample = None
    if report.counterexample is not None:
        label, observables = report.counterexample
        counterexample = CounterexampleDocument(
            label=render_label(label),
            observables={name: [_render(v) for v in values] for name, values in sorted(observables.items())},
        )
    mapping = None
    if report.mapping is not None:
        mapping = {
            render_label(label): {name: [_render(v) for v in values] for name, values in sorted(obs.items())}
            for label, obs in sorted(report.mapping.items())
        }
    diagnostics = None
    if include_diagnostics:
        diagnostics = {"wall_time": round(report.wall_time, 6)}
        if report.scans is not None:
            diagnostics["scans"] = {
                f"{rule}@{sti}": render_value(normalize_value(value))
                for (rule, sti), value in report.scans.per_evaluation().items()
            }
    return ReportDocument(
        verdict=report.verdict,
        theorem=report.theorem,
        mode=report.mode,
        completed=report.completed,
        pruned=report.pruned,
        valid=report.valid,
        counterexample=counterexample,
        envelope=envelope,
        ratios={
            name: RatioDocument(min=_render(stats.min), max=_render(stats.max))
            for name, stats in sorted(report.ratios.items())
        },
        mapping=mapping,
        diagnostics=diagnostics,
    )


def export_report(report: ExplorationReport, fmt: str = "json", include_diagnostics: bool = False) -> bytes:
    """Deterministic JSON or CSV rendering of a report"""
    if fmt == "json":
        document = report_document(report, include_diagnostics)
        payload = document.model_dump(mode="json", by_alias=True, exclude_none=False)
        if payload.get("mapping") is None:
            payload.pop("mapping", None)
        if payload.get("diagnostics") is None:
            payload.pop("diagnostics", None)
        return (json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["sti", "observable", "min", "max", "argmin", "argmax"])
        rows = []
        if not report.envelope.is_empty():
            for name, row in report.envelope.bounds.items():
                for sti, bound in enumerate(row, start=1):
                    if bound is not None:
                        rows.append((sti, name, _render(bound.min), _render(bound.max),
                                     render_label(bound.argmin), render_label(bound.argmax)))
        for row in sorted(rows, key=lambda r: (r[0], r[1])):
            writer.writerow(row)
        return buffer.getvalue().encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")
