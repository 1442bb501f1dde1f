"""Rule splitting and predicate folding.

A generic transition rule is copied once per STI (and, per its directive,
once per instance of the named sorts) with those variables replaced by
constants. Time-indexed atoms are then folded: `price(P, X, 3)` becomes
`price-3(P, X)`, so every split rule reads and writes buckets that hold
a single STI.
"""
import logging
from dataclasses import dataclass
from functools import reduce
from itertools import product, zip_longest
from operator import mul
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from database import Database
from engine import Engine, build_partitions
from errors import FoldError, SpecializationError
from logging_config import CompilerLogger
from models import (
    ANONYMOUS,
    TIME_SORT,
    AggregateOp,
    Atom,
    Candidates,
    Constant,
    Fact,
    Literal,
    LiteralKind,
    Observable,
    ObservableOp,
    PredicateDecl,
    Program,
    Provenance,
    Rule,
    Term,
    Theorem,
    Value,
    Variable,
)
from rule_dsl import RuleKind, rule_shape, variable_sorts

logger = logging.getLogger(__name__)

Directives = Dict[str, Tuple[str, ...]]


@dataclass(frozen=True)
class SpecializedProgram:
    program: Program
    source: Program
    # split rule id -> generic rule, STI, substituted instance variables
    provenance: Dict[str, Provenance]
    # folded predicate -> (family, STI)
    fold_map: Dict[str, Tuple[str, int]]
    directives: Directives
    # generic rule id -> number of split rules
    counts: Dict[str, int]

    def rules_of(self, generic_rule: str) -> List[Rule]:
        return [r for r in self.program.rules if self.provenance[r.id].rule == generic_rule]

    @property
    def total(self) -> int:
        return len(self.program.rules)


def default_directives(program: Program) -> Directives:
    """Each rule's own `split(...)` clause, else time only for transition rules"""
    directives = {}
    for rule in program.rules:
        if rule.split is not None:
            directives[rule.id] = tuple(rule.split)
        elif rule_shape(rule, program).kind is RuleKind.TRANSITION:
            directives[rule.id] = (TIME_SORT,)
        else:
            directives[rule.id] = ()
    return directives


def _split_variables(rule: Rule, program: Program, dimensions: Sequence[str]) -> List[Tuple[str, str]]:
    """(sort, variable) for each split sort of a rule"""
    sorts = variable_sorts(rule, program)
    head_vars = {name for atom in rule.head for name in atom.variables()}
    bound_by_body = set()
    for literal in rule.body:
        if literal.kind is LiteralKind.CHOICE:
            bound_by_body.add(literal.variable)
        elif literal.kind is LiteralKind.AGGREGATE:
            bound_by_body.add(literal.variable)
            if literal.target:
                bound_by_body.add(literal.target)
    chosen = []
    for sort in dimensions:
        if sort == TIME_SORT:
            continue
        if sort not in program.sorts:
            raise SpecializationError(f"rule {rule.id}: split names unknown sort {sort}")
        candidates = sorted(name for name, names in sorts.items() if sort in names)
        if not candidates:
            raise SpecializationError(f"rule {rule.id}: no variable of sort {sort} to split by")
        in_head = [name for name in candidates if name in head_vars]
        pool = in_head or candidates
        if len(pool) > 1:
            raise SpecializationError(
                f"rule {rule.id}: sort {sort} is ambiguous between variables {', '.join(pool)}"
            )
        variable = pool[0]
        if variable in bound_by_body:
            raise SpecializationError(f"rule {rule.id}: cannot split by {variable}, a choice or aggregate variable")
        chosen.append((sort, variable))
    return chosen


# Substitution and folding


def _substitute_term(term: Term, binding: Mapping[str, Value]) -> Term:
    if isinstance(term, Variable) and term.name in binding:
        return Constant(binding[term.name])
    return term


def _fold_atom(atom: Atom, binding: Mapping[str, Value], program: Program) -> Atom:
    args = tuple(_substitute_term(t, binding) for t in atom.args)
    decl = program.predicates.get(atom.predicate)
    if decl is None or not decl.time_indexed or not isinstance(args[-1], Constant):
        return Atom(atom.predicate, args, atom.offset)
    sti = args[-1].value + atom.offset
    return Atom(f"{atom.predicate}-{sti}", args[:-1])


def _fold_literal(literal: Literal, binding: Mapping[str, Value], program: Program) -> Literal:
    def terms(items: Iterable[Term]) -> Tuple[Term, ...]:
        return tuple(_substitute_term(t, binding) for t in items)

    kind = literal.kind
    if kind is LiteralKind.CHOICE:
        candidates = literal.candidates
        source = _fold_atom(candidates.source, binding, program) if candidates.source is not None else None
        folded = Candidates(candidates.sort, terms(candidates.excluded), terms(candidates.members), source)
        return Literal(kind, variable=literal.variable, candidates=folded, position=literal.position)
    if kind is LiteralKind.BUILTIN:
        return Literal(kind, function=literal.function, inputs=terms(literal.inputs),
                       output=_substitute_term(literal.output, binding), position=literal.position)
    atom = _fold_atom(literal.atom, binding, program)
    if kind is LiteralKind.AGGREGATE:
        group = tuple(name for name in literal.group if name not in binding)
        return Literal(kind, atom=atom, variable=literal.variable, operator=literal.operator,
                       target=literal.target, group=group, position=literal.position)
    return Literal(kind, atom=atom, position=literal.position)


def _membership(literal: Literal, program: Program) -> Optional[bool]:
    """Truth of a ground literal over an implicit sort predicate, else None"""
    if literal.kind not in (LiteralKind.POSITIVE, LiteralKind.NEGATED):
        return None
    atom = literal.atom
    if atom.predicate not in program.sorts or not atom.ground:
        return None
    member = atom.args[0].value in program.sorts[atom.predicate]
    return member if literal.kind is LiteralKind.POSITIVE else not member


def _instantiate(rule: Rule, rule_id: str, binding: Mapping[str, Value], program: Program) -> Rule:
    body = []
    for literal in rule.body:
        folded = _fold_literal(literal, binding, program)
        # a true membership test is dropped; a false one keeps the rule inert
        if _membership(folded, program) is True:
            continue
        body.append(folded)
    head = tuple(_fold_atom(atom, binding, program) for atom in rule.head)
    return Rule(rule_id, tuple(body), head, None, rule.position)


def _folded_declarations(program: Program) -> Tuple[Dict[str, PredicateDecl], Dict[str, Tuple[str, int]]]:
    predicates: Dict[str, PredicateDecl] = {}
    fold_map: Dict[str, Tuple[str, int]] = {}
    for name, decl in program.predicates.items():
        if not decl.time_indexed:
            predicates[name] = decl
            continue
        for sti in range(1, program.horizon + 1):
            folded = f"{name}-{sti}"
            predicates[folded] = PredicateDecl(folded, decl.sorts[:-1])
            fold_map[folded] = (name, sti)
    return predicates, fold_map


def specialize(program: Program, directives: Optional[Mapping[str, Sequence[str]]] = None) -> SpecializedProgram:
    """Split every transition rule by time and its directive's sorts, then fold time"""
    if program.horizon < 2:
        raise SpecializationError(f"horizon {program.horizon} leaves no transition to split")
    resolved = default_directives(program)
    for rule_id, dimensions in (directives or {}).items():
        try:
            program.rule(rule_id)
        except KeyError:
            raise SpecializationError(f"directive names unknown rule {rule_id}") from None
        resolved[rule_id] = tuple(dimensions)

    static: List[Rule] = []
    final: List[Rule] = []
    # split rules are declared STI-major so the plan's tie-breaks follow time
    by_sti: Dict[int, List[Rule]] = {sti: [] for sti in range(1, program.horizon)}
    provenance: Dict[str, Provenance] = {}
    counts: Dict[str, int] = {}
    for rule in program.rules:
        shape = rule_shape(rule, program)
        dimensions = resolved[rule.id]
        if shape.kind is not RuleKind.TRANSITION:
            if dimensions:
                raise SpecializationError(f"rule {rule.id} has no time variable and cannot be split")
            (static if shape.kind is RuleKind.STATIC else final).append(_instantiate(rule, rule.id, {}, program))
            provenance[rule.id] = Provenance(rule.id, 0)
            counts[rule.id] = 1
            continue
        if TIME_SORT not in dimensions:
            raise SpecializationError(f"transition rule {rule.id} must be split by time")
        split_vars = _split_variables(rule, program, dimensions)
        if split_vars and any(literal.kind is LiteralKind.CHOICE for literal in rule.body):
            raise SpecializationError(f"rule {rule.id} makes a choice and can only be split by time")
        instance_lists = [program.sorts[sort] for sort, _ in split_vars]
        count = 0
        for sti in range(1, program.horizon):
            for instances in product(*instance_lists):
                binding = {shape.time_variable: sti}
                suffix = [str(sti)]
                for (_, variable), instance in zip(split_vars, instances):
                    binding[variable] = instance
                    suffix.append(instance)
                rule_id = f"{rule.id}-{'-'.join(suffix)}"
                by_sti[sti].append(_instantiate(rule, rule_id, binding, program))
                fixed = tuple(sorted((v, i) for (_, v), i in zip(split_vars, instances)))
                provenance[rule_id] = Provenance(rule.id, sti, fixed)
                count += 1
        counts[rule.id] = count
    rules = static + [rule for sti in sorted(by_sti) for rule in by_sti[sti]] + final

    predicates, fold_map = _folded_declarations(program)
    facts = tuple(_fold_atom(atom, {}, program) for atom in program.facts)
    split_program = Program(
        horizon=program.horizon,
        sorts=dict(program.sorts),
        params=dict(program.params),
        predicates=predicates,
        facts=facts,
        rules=tuple(rules),
        observables=program.observables,
        theorems=program.theorems,
        folds=fold_map,
    )
    # a cycle or bad stratification surfaces here rather than mid-exploration
    build_partitions(split_program)
    CompilerLogger.log_specialization(len(program.rules), len(rules), len(fold_map))
    return SpecializedProgram(split_program, program, provenance, fold_map, resolved, counts)


def fold_predicates(item: Union[Fact, Database, Iterable[Fact]], direction: str, program: Program):
    """Translate facts between the generic and the folded vocabulary of `program`.

    `program` is the generic program. Predicates that are not time-indexed
    pass through unchanged in both directions.
    """
    if direction not in ("fold", "unfold"):
        raise ValueError(f"direction must be fold or unfold, not {direction!r}")
    if isinstance(item, Fact):
        return _fold_fact(item, program) if direction == "fold" else _unfold_fact(item, program)
    if isinstance(item, Database):
        if direction == "fold":
            _, fold_map = _folded_declarations(program)
            target = Database(program.horizon, (), fold_map)
        else:
            target = Database.for_program(program)
        for fact in item.facts():
            translated = fold_predicates(fact, direction, program)
            target.add(translated.predicate, translated.args, fact.rule)
        return target
    return [fold_predicates(fact, direction, program) for fact in item]


def _fold_fact(fact: Fact, program: Program) -> Fact:
    decl = program.predicates.get(fact.predicate)
    if decl is None or not decl.time_indexed:
        return fact
    sti = fact.args[-1]
    return Fact(f"{fact.predicate}-{sti}", fact.args[:-1], sti, fact.rule)


def _unfold_fact(fact: Fact, program: Program) -> Fact:
    if fact.predicate in program.predicates or fact.predicate in program.sorts:
        return fact
    _, fold_map = _folded_declarations(program)
    if fact.predicate not in fold_map:
        raise FoldError(f"unknown folded predicate {fact.predicate}")
    base, sti = fold_map[fact.predicate]
    return Fact(base, fact.args + (sti,), sti, fact.rule)


# Equivalence


@dataclass(frozen=True)
class Divergence:
    label: str
    # structure | status | facts
    kind: str
    detail: str


@dataclass(frozen=True)
class EquivalenceReport:
    equivalent: bool
    compared: int
    divergence: Optional[Divergence] = None


def _compare_leaves(generic_leaf, split_leaf) -> Optional[Divergence]:
    label = str(generic_leaf.label)
    if generic_leaf.label.indices != split_leaf.label.indices or \
            [s.choice_point for s in generic_leaf.label.selections] != \
            [s.choice_point for s in split_leaf.label.selections]:
        return Divergence(label, "structure", f"split run reached label {split_leaf.label} instead")
    if generic_leaf.status is not split_leaf.status:
        return Divergence(label, "status", f"{generic_leaf.status.value} vs {split_leaf.status.value}")
    expected = generic_leaf.database.fact_set()
    actual = split_leaf.database.unfolded_fact_set()
    if expected != actual:
        missing = sorted(expected - actual, key=repr)
        extra = sorted(actual - expected, key=repr)
        detail = []
        if missing:
            predicate, args = missing[0]
            detail.append(f"missing {Fact(predicate, args)}")
        if extra:
            predicate, args = extra[0]
            detail.append(f"unexpected {Fact(predicate, args)}")
        return Divergence(label, "facts", "; ".join(detail))
    return None


def verify_equivalence(generic: Program, split: SpecializedProgram,
                       sample: Union[str, Sequence[Sequence[int]]] = "all") -> EquivalenceReport:
    """Run both programs over the same choice tree and compare paired leaves"""
    generic_engine = Engine(generic)
    split_engine = Engine(split.program, split.provenance)
    compared = 0
    divergence = None

    if sample == "all":
        pairs = zip_longest(generic_engine.enumerate(), split_engine.enumerate())
        for generic_leaf, split_leaf in pairs:
            if generic_leaf is None or split_leaf is None:
                present = generic_leaf or split_leaf
                side = "generic" if split_leaf is None else "split"
                divergence = Divergence(str(present.label), "structure", f"only the {side} run has this leaf")
                break
            divergence = _compare_leaves(generic_leaf, split_leaf)
            if divergence is not None:
                break
            compared += 1
    else:
        for indices in sample:
            divergence = _compare_leaves(generic_engine.replay(indices), split_engine.replay(indices))
            if divergence is not None:
                break
            compared += 1

    if divergence is not None:
        CompilerLogger.log_divergence(divergence.label, divergence.kind, divergence.detail)
    return EquivalenceReport(divergence is None, compared, divergence)


def predict_cost(program: Program, directives: Optional[Mapping[str, Sequence[str]]] = None) -> Dict[str, int]:
    """Nominal scan-reduction factor per rule: M for time, times N_s per split sort"""
    resolved = default_directives(program)
    resolved.update({k: tuple(v) for k, v in (directives or {}).items()})
    factors = {}
    for rule in program.rules:
        dimensions = resolved.get(rule.id, ())
        sizes = [program.horizon - 1 if d == TIME_SORT else len(program.sorts.get(d, ())) for d in dimensions]
        factors[rule.id] = reduce(mul, sizes, 1)
    return factors


# In-model theorem rule


def write_theorem_rule(theorem: Theorem, observable: Observable, program: Program,
                       rule_id: str = "theoremCheck") -> Rule:
    """Final rule deriving tendency(<theorem>) when the chain holds at every STI.

    Each STI's observable value is computed by an aggregate over the
    observable's predicate at that constant STI, and consecutive values are
    compared with the relation's builtin.
    """
    decl = program.predicates.get(observable.predicate)
    if decl is None or not decl.time_indexed:
        raise SpecializationError(f"observable {observable.name} must read a time-indexed predicate")
    width = decl.arity - 1
    body: List[Literal] = []
    values: List[str] = []
    for sti in range(theorem.first, theorem.last + 1):
        def pattern(target: Optional[str]) -> Atom:
            args = [Variable(ANONYMOUS)] * width
            if target is not None:
                args[observable.argument - 1] = Variable(target)
            return Atom(observable.predicate, tuple(args) + (Constant(sti),))

        value = f"{observable.name.capitalize()}{sti}"
        target = f"V{sti}"
        op = observable.operator
        if op is ObservableOp.SPREAD:
            high, low = f"High{sti}", f"Low{sti}"
            body.append(Literal(LiteralKind.AGGREGATE, atom=pattern(target), variable=high,
                                operator=AggregateOp.MAX, target=target))
            body.append(Literal(LiteralKind.AGGREGATE, atom=pattern(target), variable=low,
                                operator=AggregateOp.MIN, target=target))
            body.append(Literal(LiteralKind.BUILTIN, function="sub", inputs=(Variable(high), Variable(low)),
                                output=Variable(value)))
        elif op is ObservableOp.COUNT:
            body.append(Literal(LiteralKind.AGGREGATE, atom=pattern(None), variable=value,
                                operator=AggregateOp.COUNT))
        else:
            body.append(Literal(LiteralKind.AGGREGATE, atom=pattern(target), variable=value,
                                operator=AggregateOp(op.value), target=target))
        values.append(value)
    for before, after in zip(values, values[1:]):
        body.append(Literal(LiteralKind.BUILTIN, function=theorem.relation.builtin,
                            inputs=(Variable(after), Variable(before)), output=Constant("true")))
    head = (Atom("tendency", (Constant(theorem.name),)),)
    return Rule(rule_id, tuple(body), head)


def describe_plan(split: SpecializedProgram) -> List[Tuple[str, int, int]]:
    """(generic rule, generic count, split count) rows in declaration order"""
    return [(rule.id, 1, split.counts[rule.id]) for rule in split.source.rules]


def trace_provenance(split: SpecializedProgram, rule_id: str) -> str:
    info = split.provenance[rule_id]
    binding = ", ".join(f"{k}={v}" for k, v in info.binding)
    return f"{rule_id} <- {info.rule} at STI {info.sti}" + (f" {{{binding}}}" if binding else "")
