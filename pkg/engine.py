"""Forward-chaining prover.

A program is compiled into stages: the static partitions, then the
transition partitions once per level d = 1..horizon-1 (the time variable
bound to d), then the final partitions. Each partition is fired to its
fixpoint; a choice literal that has no selection yet suspends its rule
instance and, once the partition is otherwise saturated, the smallest
pending choice point is handed back to the depth-first walker, which
tries every candidate and rolls the database back between siblings.
"""
import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from collections_extended import setlist

from builtins_table import lookup
from database import Database, init_database
from errors import BuiltinError, LabelError, StratificationError
from logging_config import EngineLogger
from models import (
    WITNESS_PREDICATE,
    AggregateOp,
    AssumptionLabel,
    ChoicePoint,
    ChoicePointId,
    ChoiceSelection,
    Fact,
    Literal,
    LiteralKind,
    Program,
    Provenance,
    PruneInfo,
    Rule,
    Status,
    Term,
    TrajectoryRecord,
    Value,
    Variable,
    normalize_value,
    render_label,
    value_key,
)
from rule_dsl import RuleKind, rule_shape

logger = logging.getLogger(__name__)


# Partitioning


@dataclass(frozen=True)
class Partition:
    rules: Tuple[str, ...]
    stratum: int
    stage: RuleKind
    recursive: bool


@dataclass(frozen=True)
class PartitionPlan:
    partitions: Tuple[Partition, ...]

    def rule_sets(self) -> List[frozenset]:
        return [frozenset(p.rules) for p in self.partitions]

    def partition_of(self, rule_id: str) -> int:
        for index, partition in enumerate(self.partitions):
            if rule_id in partition.rules:
                return index
        raise KeyError(rule_id)


def _strongly_connected(nodes: Sequence[str], edges: Mapping[str, Dict[str, bool]]) -> List[List[str]]:
    """Tarjan's algorithm; components come out in reverse topological order"""
    index: Dict[str, int] = {}
    low: Dict[str, int] = {}
    stack: List[str] = []
    on_stack = set()
    components: List[List[str]] = []
    counter = 0

    def visit(node: str):
        nonlocal counter
        index[node] = low[node] = counter
        counter += 1
        stack.append(node)
        on_stack.add(node)
        for succ in edges.get(node, {}):
            if succ not in index:
                visit(succ)
                low[node] = min(low[node], low[succ])
            elif succ in on_stack:
                low[node] = min(low[node], index[succ])
        if low[node] == index[node]:
            component = []
            while True:
                top = stack.pop()
                on_stack.discard(top)
                component.append(top)
                if top == node:
                    break
            components.append(component)

    for node in nodes:
        if node not in index:
            visit(node)
    return components


def build_partitions(program: Program) -> PartitionPlan:
    """Condense the rule dependency graph into an ordered partition plan.

    Within the transition stage only same-level writes create edges; the
    +1 consequents are read at the next level. A negated, aggregated or
    choice read inside a strongly connected component is rejected.
    """
    shapes = {rule.id: rule_shape(rule, program) for rule in program.rules}
    order = {rule.id: i for i, rule in enumerate(program.rules)}
    partitions: List[Partition] = []

    for stage in (RuleKind.STATIC, RuleKind.TRANSITION, RuleKind.FINAL):
        nodes = [r.id for r in program.rules if shapes[r.id].kind is stage]
        writers: Dict[str, List[str]] = {}
        for node in nodes:
            for predicate in shapes[node].writes:
                writers.setdefault(predicate, []).append(node)
        # edges[writer][reader] = True when the read is nonmonotone
        edges: Dict[str, Dict[str, bool]] = {node: {} for node in nodes}
        for reader in nodes:
            for predicate, nonmonotone in shapes[reader].reads:
                for writer in writers.get(predicate, ()):
                    edges[writer][reader] = edges[writer].get(reader, False) or nonmonotone

        components = _strongly_connected(nodes, edges)
        owner = {}
        for number, component in enumerate(components):
            component.sort(key=order.__getitem__)
            for node in component:
                owner[node] = number
        for component in components:
            members = set(component)
            for node in component:
                for succ, nonmonotone in edges[node].items():
                    if succ in members and nonmonotone:
                        cycle = component + [component[0]]
                        raise StratificationError("negation or aggregation inside a recursive cycle", cycle)

        # Kahn's algorithm, ties broken by declaration order
        indegree = Counter()
        successors: Dict[int, set] = {n: set() for n in range(len(components))}
        negative: Dict[Tuple[int, int], bool] = {}
        for node in nodes:
            for succ, nonmonotone in edges[node].items():
                a, b = owner[node], owner[succ]
                if a == b:
                    continue
                if b not in successors[a]:
                    successors[a].add(b)
                    indegree[b] += 1
                negative[(a, b)] = negative.get((a, b), False) or nonmonotone
        ready = [(order[components[n][0]], n) for n in range(len(components)) if indegree[n] == 0]
        heapq.heapify(ready)
        stratum = Counter()
        while ready:
            _, number = heapq.heappop(ready)
            component = components[number]
            recursive = len(component) > 1 or component[0] in edges[component[0]]
            partitions.append(Partition(tuple(component), stratum[number], stage, recursive))
            for succ in sorted(successors[number]):
                step = 1 if negative[(number, succ)] else 0
                stratum[succ] = max(stratum[succ], stratum[number] + step)
                indegree[succ] -= 1
                if indegree[succ] == 0:
                    heapq.heappush(ready, (order[components[succ][0]], succ))

    return PartitionPlan(tuple(partitions))


# Compiled rules

_CONST, _VAR, _ANY = 0, 1, 2
_POSITIVE, _NEGATED, _CHOICE, _BUILTIN, _AGGREGATE = range(5)
_UNBOUND = object()


def _unify(pattern, args, env) -> Optional[List[str]]:
    bound = []
    for (mode, x), value in zip(pattern, args):
        if mode == _VAR:
            current = env.get(x, _UNBOUND)
            if current is _UNBOUND:
                env[x] = value
                bound.append(x)
                continue
            if current == value:
                continue
        elif mode == _ANY or x == value:
            continue
        for name in bound:
            del env[name]
        return None
    return bound


def _resolve(spec, env) -> Value:
    mode, x = spec
    return env[x] if mode == _VAR else x


class _Step:
    __slots__ = ("kind", "predicate", "pattern", "variable", "form", "values", "builtin",
                 "function", "inputs", "output", "operator", "target")

    def __init__(self, kind: int):
        self.kind = kind
        self.predicate = None
        self.pattern = ()
        self.variable = None
        self.form = None
        self.values = ()
        self.builtin = None
        self.function = None
        self.inputs = ()
        self.output = None
        self.operator = None
        self.target = None


class CompiledRule:
    """A rule lowered to match steps with parameters substituted"""

    def __init__(self, rule: Rule, program: Program, provenance: Optional[Provenance] = None):
        shape = rule_shape(rule, program)
        self.id = rule.id
        self.kind = shape.kind
        self.time_variable = shape.time_variable
        self.falsum = rule.falsum
        self.origin = provenance.rule if provenance else rule.id
        self.sti = provenance.sti if provenance else 0
        self.fixed_binding = provenance.binding if provenance else ()
        self._params = program.params
        self._sorts = program.sorts
        self.steps = tuple(self._compile_literal(literal) for literal in rule.body)
        self.heads = tuple(
            (atom.predicate, tuple(self._term(t) for t in atom.args), atom.offset)
            for atom in rule.head
            if not rule.falsum
        )

    def _term(self, term: Term):
        if isinstance(term, Variable):
            return (_ANY, None) if term.anonymous else (_VAR, term.name)
        value = term.value
        if isinstance(value, str) and value in self._params:
            value = self._params[value]
        return (_CONST, value)

    def _compile_literal(self, literal: Literal) -> _Step:
        kind = literal.kind
        if kind is LiteralKind.POSITIVE or kind is LiteralKind.NEGATED:
            step = _Step(_POSITIVE if kind is LiteralKind.POSITIVE else _NEGATED)
            step.predicate = literal.atom.predicate
            step.pattern = tuple(self._term(t) for t in literal.atom.args)
        elif kind is LiteralKind.CHOICE:
            step = _Step(_CHOICE)
            step.variable = literal.variable
            candidates = literal.candidates
            step.form = candidates.form
            if candidates.sort is not None:
                step.predicate = candidates.sort
                step.values = tuple(self._sorts[candidates.sort])
                step.inputs = tuple(self._term(t) for t in candidates.excluded)
            elif candidates.source is not None:
                step.predicate = candidates.source.predicate
                step.pattern = tuple(self._term(t) for t in candidates.source.args)
            else:
                step.inputs = tuple(self._term(t) for t in candidates.members)
        elif kind is LiteralKind.BUILTIN:
            step = _Step(_BUILTIN)
            step.function = literal.function
            step.builtin = lookup(literal.function)
            step.inputs = tuple(self._term(t) for t in literal.inputs)
            step.output = self._term(literal.output)
        else:
            step = _Step(_AGGREGATE)
            step.variable = literal.variable
            step.operator = literal.operator
            step.target = literal.target
            step.predicate = literal.atom.predicate
            step.pattern = tuple(self._term(t) for t in literal.atom.args)
        return step

    def binding(self, env: Mapping[str, Value]) -> Tuple[Tuple[str, Value], ...]:
        items = {name: value for name, value in env.items() if name != self.time_variable}
        items.update(self.fixed_binding)
        return tuple(sorted(items.items()))

    def instance_sti(self, level: Optional[int]) -> int:
        return level if self.time_variable is not None else self.sti


# Outcomes


@dataclass(frozen=True)
class Saturated:
    database: Database


@dataclass(frozen=True)
class Pruned:
    prune: PruneInfo


@dataclass(frozen=True)
class Branch:
    choice_point: ChoicePoint


Outcome = Union[Saturated, Pruned, Branch]


@dataclass(frozen=True)
class Frontier:
    """An unexplored subtree below a label prefix"""

    prefix: Tuple[int, ...]
    choice_point: ChoicePoint


@dataclass
class ScanCounter:
    """Candidate facts scanned per (generic rule, STI)"""

    scanned: Counter = field(default_factory=Counter)
    evaluations: Counter = field(default_factory=Counter)

    def record(self, key: Tuple[str, int], scanned: int):
        self.scanned[key] += scanned
        self.evaluations[key] += 1

    def per_evaluation(self) -> Dict[Tuple[str, int], Fraction]:
        return {
            key: Fraction(self.scanned[key], count)
            for key, count in sorted(self.evaluations.items())
            if count
        }

    def counts(self) -> Dict[Tuple[str, int], int]:
        """Exact scan totals, before dividing by the number of evaluations"""
        return dict(sorted(self.scanned.items()))

    def curve(self, rule: str) -> List[Tuple[int, Fraction]]:
        return sorted((sti, value) for (name, sti), value in self.per_evaluation().items() if name == rule)

    def merge(self, other: "ScanCounter") -> "ScanCounter":
        merged = ScanCounter(Counter(self.scanned), Counter(self.evaluations))
        merged.scanned.update(other.scanned)
        merged.evaluations.update(other.evaluations)
        return merged

    def total(self) -> int:
        return sum(self.scanned.values())


class _CompiledPartition:
    __slots__ = ("rules", "recursive", "stage")

    def __init__(self, rules: Tuple[CompiledRule, ...], recursive: bool, stage: RuleKind):
        self.rules = rules
        self.recursive = recursive
        self.stage = stage


class Engine:
    """Compiled program plus the state of one exploration run"""

    def __init__(self, program: Program, provenance: Optional[Mapping[str, Provenance]] = None,
                 instrument: bool = False, tracer: Optional[Callable[[str], None]] = None):
        self.program = program
        self.plan = build_partitions(program)
        provenance = provenance or {}
        compiled = {rule.id: CompiledRule(rule, program, provenance.get(rule.id)) for rule in program.rules}
        self.partitions = [
            _CompiledPartition(tuple(compiled[r] for r in p.rules), p.recursive, p.stage)
            for p in self.plan.partitions
        ]
        self.stages: List[Tuple[_CompiledPartition, Optional[int]]] = []
        for partition in self.partitions:
            if partition.stage is RuleKind.STATIC:
                self.stages.append((partition, None))
        for level in range(1, program.horizon):
            for partition in self.partitions:
                if partition.stage is RuleKind.TRANSITION:
                    self.stages.append((partition, level))
        for partition in self.partitions:
            if partition.stage is RuleKind.FINAL:
                self.stages.append((partition, None))
        self.scans: Optional[ScanCounter] = ScanCounter() if instrument else None
        self.tracer = tracer
        self._db: Optional[Database] = None
        self._selections: Dict[ChoicePointId, int] = {}
        self._pending: Dict[ChoicePointId, ChoicePoint] = {}
        self._level: Optional[int] = None
        self._scanned = 0
        EngineLogger.log_plan(len(self.partitions), len(self.stages), len(program.rules))

    # Matching

    def _solve(self, rule: CompiledRule, index: int, env: Dict[str, Value]) -> Iterator[Dict[str, Value]]:
        steps = rule.steps
        if index == len(steps):
            yield env
            return
        step = steps[index]
        kind = step.kind

        if kind == _POSITIVE:
            pattern = step.pattern
            for fact in self._db.bucket(step.predicate):
                self._scanned += 1
                bound = _unify(pattern, fact.args, env)
                if bound is None:
                    continue
                yield from self._solve(rule, index + 1, env)
                for name in bound:
                    del env[name]

        elif kind == _NEGATED:
            pattern = step.pattern
            for fact in self._db.bucket(step.predicate):
                self._scanned += 1
                bound = _unify(pattern, fact.args, env)
                if bound is not None:
                    for name in bound:
                        del env[name]
                    return
            yield from self._solve(rule, index + 1, env)

        elif kind == _CHOICE:
            candidates = self._candidates(step, env)
            if not candidates:
                return
            cp_id = ChoicePointId(rule.origin, rule.instance_sti(self._level), rule.binding(env))
            selected = self._selections.get(cp_id)
            if selected is None:
                if cp_id not in self._pending:
                    self._pending[cp_id] = ChoicePoint(cp_id, candidates)
                return
            env[step.variable] = candidates[selected]
            yield from self._solve(rule, index + 1, env)
            del env[step.variable]

        elif kind == _BUILTIN:
            args = [_resolve(spec, env) for spec in step.inputs]
            try:
                result = step.builtin(*args)
            except (ArithmeticError, TypeError, ValueError) as e:
                raise BuiltinError(step.function, rule.id, rule.instance_sti(self._level), e) from e
            mode, x = step.output
            if mode == _VAR and x not in env:
                env[x] = result
                yield from self._solve(rule, index + 1, env)
                del env[x]
            elif (env[x] if mode == _VAR else x) == result:
                yield from self._solve(rule, index + 1, env)

        else:
            pattern = step.pattern
            target = step.target
            values = []
            count = 0
            for fact in self._db.bucket(step.predicate):
                self._scanned += 1
                bound = _unify(pattern, fact.args, env)
                if bound is None:
                    continue
                count += 1
                if target is not None:
                    values.append(env[target])
                for name in bound:
                    del env[name]
            operator = step.operator
            if operator is AggregateOp.COUNT:
                result = count
            elif operator is AggregateOp.SUM:
                try:
                    result = normalize_value(sum(values, 0))
                except TypeError as e:
                    raise BuiltinError("sum", rule.id, rule.instance_sti(self._level), e) from e
            elif not values:
                return
            elif operator is AggregateOp.MIN:
                result = min(values, key=value_key)
            else:
                result = max(values, key=value_key)
            env[step.variable] = result
            yield from self._solve(rule, index + 1, env)
            del env[step.variable]

    def _candidates(self, step: _Step, env: Dict[str, Value]) -> setlist:
        if step.form == "sort":
            excluded = {_resolve(spec, env) for spec in step.inputs}
            return setlist(v for v in step.values if v not in excluded)
        if step.form == "set":
            return setlist(_resolve(spec, env) for spec in step.inputs)
        found = set()
        variable = step.variable
        for fact in self._db.bucket(step.predicate):
            self._scanned += 1
            bound = _unify(step.pattern, fact.args, env)
            if bound is None:
                continue
            found.add(env[variable])
            for name in bound:
                del env[name]
        return setlist(sorted(found, key=value_key))

    # Firing

    def fire_to_fixpoint(self, partition: _CompiledPartition, database: Database,
                         selections: Mapping[ChoicePointId, int], level: Optional[int] = None) -> Outcome:
        """Fire one partition until nothing new can be derived.

        Returns Pruned on the first FALSE, Branch with the smallest pending
        choice point once everything else is saturated, else Saturated.
        """
        self._db = database
        self._selections = selections
        self._level = level
        while True:
            self._pending = {}
            changed = False
            for rule in partition.rules:
                env = {rule.time_variable: level} if rule.time_variable is not None else {}
                sti = rule.instance_sti(level)
                self._scanned = 0
                derived = []
                pruned = None
                for match in self._solve(rule, 0, env):
                    if rule.falsum:
                        pruned = PruneInfo(rule.id, sti, rule.binding(match))
                        break
                    for predicate, specs, offset in rule.heads:
                        args = tuple(_resolve(spec, match) for spec in specs)
                        if offset:
                            args = args[:-1] + (args[-1] + offset,)
                        derived.append((predicate, args))
                if self.scans is not None:
                    self.scans.record((rule.origin, sti), self._scanned)
                if pruned is not None:
                    if self.tracer:
                        self.tracer(str(pruned))
                    return Pruned(pruned)
                for predicate, args in derived:
                    if database.add(predicate, args, rule.id):
                        changed = True
                        if self.tracer:
                            self.tracer(f"STI {sti} {rule.id} {Fact(predicate, args)}")
            if not changed or not partition.recursive:
                break
        if self._pending:
            first = min(self._pending, key=ChoicePointId.sort_key)
            return Branch(self._pending[first])
        return Saturated(database)

    # Enumeration

    def enumerate(self, prefix: Sequence[int] = (), max_depth: Optional[int] = None,
                  snapshots: bool = False, initial: Iterable[Fact] = ()) -> Iterator[Union[TrajectoryRecord, Frontier]]:
        """Depth-first walk of the choice tree in candidate order.

        `prefix` forces the first selections; `max_depth` stops at that many
        selections and yields a Frontier for each unexplored subtree. A
        record's database is live until the stream advances unless
        `snapshots` is set.
        """
        database = init_database(self.program, initial)
        yield from self._walk(0, database, [], {}, tuple(prefix), max_depth, snapshots)

    def _walk(self, stage: int, database: Database, label: List[ChoiceSelection],
              selections: Dict[ChoicePointId, int], forced: Tuple[int, ...],
              max_depth: Optional[int], snapshots: bool):
        stages = self.stages
        while stage < len(stages):
            partition, level = stages[stage]
            outcome = self.fire_to_fixpoint(partition, database, selections, level)
            if isinstance(outcome, Pruned):
                yield self._leaf(database, label, Status.PRUNED, outcome.prune, forced, snapshots)
                return
            if isinstance(outcome, Branch):
                choice_point = outcome.choice_point
                depth = len(label)
                if depth < len(forced):
                    index = forced[depth]
                    if index >= len(choice_point.candidates):
                        raise LabelError(
                            f"index {index} out of range for choice point {choice_point} "
                            f"with {len(choice_point.candidates)} candidates",
                            depth,
                        )
                    choices: Iterable[int] = (index,)
                elif max_depth is not None and depth >= max_depth:
                    yield Frontier(tuple(s.index for s in label), choice_point)
                    return
                else:
                    choices = range(len(choice_point.candidates))
                mark = database.mark()
                for index in choices:
                    selections[choice_point.id] = index
                    label.append(ChoiceSelection(choice_point.id, index, choice_point.candidates[index]))
                    yield from self._walk(stage, database, label, selections, forced, max_depth, snapshots)
                    label.pop()
                    database.undo(mark)
                del selections[choice_point.id]
                return
            stage += 1
        yield self._leaf(database, label, Status.COMPLETED, None, forced, snapshots)

    def _leaf(self, database: Database, label: List[ChoiceSelection], status: Status,
              prune: Optional[PruneInfo], forced: Tuple[int, ...], snapshots: bool) -> TrajectoryRecord:
        if len(label) < len(forced):
            raise LabelError(
                f"label has {len(forced) - len(label)} selections past the end of its trajectory",
                len(label),
            )
        horizon = self.program.horizon
        observables = {
            observable.name: tuple(database.observe(observable, sti) for sti in range(1, horizon + 1))
            for observable in self.program.observables
        }
        witnesses = frozenset(f.args[0] for f in database.bucket(WITNESS_PREDICATE) if f.args)
        record = TrajectoryRecord(
            label=AssumptionLabel(tuple(label)),
            status=status,
            observables=observables,
            witnesses=witnesses,
            pruned_by=prune,
            database=database.snapshot() if snapshots else database,
        )
        if prune is not None:
            EngineLogger.log_prune(str(record.label), prune)
        return record

    def replay(self, indices: Sequence[int]) -> TrajectoryRecord:
        """Re-run exactly one trajectory; its database is a snapshot"""
        indices = tuple(indices)
        for item in self.enumerate(prefix=indices, max_depth=len(indices), snapshots=True):
            if isinstance(item, Frontier):
                raise LabelError(f"label {render_label(indices)} ends before choice point {item.choice_point}",
                                 len(indices))
            return item
        raise LabelError(f"label {render_label(indices)} reaches no trajectory", len(indices))


def enumerate_trajectories(program: Program, initial_facts: Iterable[Fact] = (),
                           provenance: Optional[Mapping[str, Provenance]] = None,
                           snapshots: bool = False) -> Iterator[TrajectoryRecord]:
    """Every leaf of the program's choice tree in deterministic order"""
    engine = Engine(program, provenance)
    for item in engine.enumerate(snapshots=snapshots, initial=initial_facts):
        yield item


def fire_to_fixpoint(engine: Engine, partition_index: int, database: Database,
                     selections: Optional[Mapping[ChoicePointId, int]] = None,
                     level: Optional[int] = None) -> Outcome:
    return engine.fire_to_fixpoint(engine.partitions[partition_index], database, selections or {}, level)


def match_count_instrumentation(run: Union[Engine, ScanCounter],
                                raw: bool = False) -> Dict[Tuple[str, int], Union[int, Fraction]]:
    """Candidate facts scanned, keyed by (rule, STI).

    Averaged per rule evaluation by default; `raw` returns the exact totals.
    """
    counter = run.scans if isinstance(run, Engine) else run
    if counter is None:
        return {}
    return counter.counts() if raw else counter.per_evaluation()
