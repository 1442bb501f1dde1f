"""Reference evaluators used to cross-check the engine.

`naive_leaves` recomputes a program's trajectories with a whole-program
fixpoint: no partitions, no undo trail, each assignment evaluated from
scratch. It handles positive, choice (over a sort or an explicit set),
builtin and FALSE literals. Trajectories are compared as maps from choice
point to selected value, which do not depend on the order in which
choice points were opened.

`brute_force_market` enumerates the market's choice vectors explicitly and
replays each one with the plain-Python formulas of pc_model.
"""
import logging
import random
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Dict, FrozenSet, Iterator, List, Optional, Set, Tuple

from builtins_table import lookup
from models import (
    ChoicePointId,
    LiteralKind,
    ModelParams,
    Program,
    Status,
    Value,
    Variable,
)
from pc_model import options, producer_names, simulate_market
from rule_dsl import RuleKind, parse_program, rule_shape

logger = logging.getLogger(__name__)

FactKey = Tuple[str, Tuple[Value, ...]]
Assignment = FrozenSet[Tuple[ChoicePointId, Value]]


@dataclass(frozen=True)
class OracleLeaf:
    assignment: Assignment
    status: Status
    facts: FrozenSet[FactKey]


class _Fixpoint:
    def __init__(self, program: Program, assignment: Dict[ChoicePointId, Value]):
        self.program = program
        self.assignment = assignment
        self.pending: Dict[ChoicePointId, List[Value]] = {}
        self.falsum = False
        self.facts: Set[FactKey] = set()
        for sort, instances in program.sorts.items():
            for instance in instances:
                self.facts.add((sort, (instance,)))
        for atom in program.facts:
            self.facts.add((atom.predicate, tuple(self.value(t) for t in atom.args)))
        self.shapes = {rule.id: rule_shape(rule, program) for rule in program.rules}

    def value(self, term, env=None):
        if isinstance(term, Variable):
            return env[term.name]
        value = term.value
        return self.program.params.get(value, value) if isinstance(value, str) else value

    def match(self, args, fact_args, env) -> Optional[dict]:
        if len(args) != len(fact_args):
            return None
        extended = dict(env)
        for term, value in zip(args, fact_args):
            if isinstance(term, Variable):
                if term.anonymous:
                    continue
                if term.name in extended:
                    if extended[term.name] != value:
                        return None
                else:
                    extended[term.name] = value
            elif self.value(term) != value:
                return None
        return extended

    def solutions(self, rule, body, env, sti, time_variable) -> Iterator[dict]:
        if not body:
            yield env
            return
        literal, rest = body[0], body[1:]
        if literal.kind is LiteralKind.POSITIVE:
            atom = literal.atom
            for predicate, args in list(self.facts):
                if predicate != atom.predicate:
                    continue
                extended = self.match(atom.args, args, env)
                if extended is not None:
                    yield from self.solutions(rule, rest, extended, sti, time_variable)
        elif literal.kind is LiteralKind.CHOICE:
            candidates = literal.candidates
            if candidates.sort is not None:
                excluded = {self.value(t, env) for t in candidates.excluded}
                values = [v for v in self.program.sorts[candidates.sort] if v not in excluded]
            elif candidates.source is None:
                values = []
                for term in candidates.members:
                    v = self.value(term, env)
                    if v not in values:
                        values.append(v)
            else:
                raise ValueError("the naive evaluator does not support choice over facts")
            if not values:
                return
            binding = tuple(sorted((k, v) for k, v in env.items() if k != time_variable))
            cp = ChoicePointId(rule.id, sti, binding)
            if cp not in self.assignment:
                self.pending.setdefault(cp, values)
                return
            yield from self.solutions(rule, rest, {**env, literal.variable: self.assignment[cp]}, sti, time_variable)
        elif literal.kind is LiteralKind.BUILTIN:
            result = lookup(literal.function)(*(self.value(t, env) for t in literal.inputs))
            output = literal.output
            if isinstance(output, Variable) and output.name not in env:
                yield from self.solutions(rule, rest, {**env, output.name: result}, sti, time_variable)
            elif self.value(output, env) == result:
                yield from self.solutions(rule, rest, env, sti, time_variable)
        else:
            raise ValueError(f"the naive evaluator does not support {literal.kind.value} literals")

    def run(self):
        changed = True
        while changed:
            changed = False
            self.pending = {}
            for rule in self.program.rules:
                shape = self.shapes[rule.id]
                if shape.kind is RuleKind.TRANSITION:
                    levels = [(level, {shape.time_variable: level}) for level in range(1, self.program.horizon)]
                else:
                    levels = [(0, {})]
                for sti, env in levels:
                    for solution in list(self.solutions(rule, rule.body, env, sti, shape.time_variable)):
                        if rule.falsum:
                            self.falsum = True
                            continue
                        for atom in rule.head:
                            args = [self.value(t, solution) for t in atom.args]
                            if atom.offset:
                                args[-1] += atom.offset
                            key = (atom.predicate, tuple(args))
                            if key not in self.facts:
                                self.facts.add(key)
                                changed = True
        return self


def naive_leaves(program: Program) -> List[OracleLeaf]:
    """Every trajectory of a monotone program, evaluated independently per assignment"""
    leaves: List[OracleLeaf] = []

    def walk(assignment: Dict[ChoicePointId, Value]):
        state = _Fixpoint(program, assignment).run()
        key = frozenset(assignment.items())
        if state.falsum:
            leaves.append(OracleLeaf(key, Status.PRUNED, frozenset(state.facts)))
            return
        if not state.pending:
            leaves.append(OracleLeaf(key, Status.COMPLETED, frozenset(state.facts)))
            return
        cp = min(state.pending, key=ChoicePointId.sort_key)
        for value in state.pending[cp]:
            walk({**assignment, cp: value})

    walk({})
    return leaves


def completed_assignments(leaves) -> Set[Assignment]:
    return {leaf.assignment for leaf in leaves if leaf.status is Status.COMPLETED}


# Random programs

_RULE_TEMPLATES = [
    "rule copy: p(X, D) implies q(X, D).",
    "rule step: q(X, D) implies p(X, D + 1).",
    "rule pick: p(X, D) and choose Y in a implies r(X, Y, D).",
    "rule pickOther: q(X, D) and choose Y in a except X implies r(X, Y, D).",
    "rule pickSet: p(X, D) and choose Y in {{a1, {member}}} implies r(X, Y, D).",
    "rule carry: r(X, Y, D) implies p(Y, D + 1).",
    "rule clash: r(X, Y, D) and q(Y, D) implies FALSE.",
    "rule same: r(X, Y, D) and eval eq(X, Y) -> true implies FALSE.",
    "rule mark: s(X) and p(X, D) implies q(X, D).",
    "rule seed: a(X) and eval ne(X, a1) -> true implies s(X).",
]


def random_program(rng: random.Random, max_rules: int = 4, max_leaves: int = 8) -> Program:
    """A small valid monotone program with at most `max_leaves` trajectories"""
    while True:
        horizon = rng.randint(2, 3)
        count = rng.randint(1, max_rules)
        templates = rng.sample(_RULE_TEMPLATES, count)
        rules = [t.format(member=rng.choice(["a1", "a2", "a3"])) for t in templates]
        facts = ["fact p(a1, 1)."]
        if rng.random() < 0.5:
            facts.append(f"fact q({rng.choice(['a1', 'a2'])}, 1).")
        text = "\n".join([
            f"horizon {horizon}.",
            "sort a = {a1, a2, a3}.",
            "pred p(a, time).",
            "pred q(a, time).",
            "pred r(a, a, time).",
            "pred s(a).",
            *facts,
            "observable width = count(p, 1).",
            *rules,
        ])
        program = parse_program(text)
        if len(naive_leaves(program)) <= max_leaves:
            return program


# Market oracle


def market_labels(params: ModelParams) -> Iterator[Tuple[Tuple[int, ...], List[Dict[str, str]]]]:
    """Every label of the market's choice tree with the choices it encodes"""
    producers = producer_names(params.producers)
    per_day = options(params)
    slots = [(day, producer) for day in sorted(per_day) for producer in producers]
    for indices in product(*(range(len(per_day[day][producer])) for day, producer in slots)):
        choices: List[Dict[str, str]] = [dict() for _ in range(params.horizon - 1)]
        for (day, producer), index in zip(slots, indices):
            choices[day - 1][producer] = per_day[day][producer][index]
        yield indices, choices


def brute_force_market(params: ModelParams) -> Dict[Tuple[int, ...], Tuple[Fraction, ...]]:
    """Label -> price interval at every STI, by explicit replay of each choice vector"""
    result = {}
    for indices, choices in market_labels(params):
        history = simulate_market(params, choices)
        result[indices] = tuple(max(day.values()) - min(day.values()) for day in history)
    return result


def expected_leaf_count(params: ModelParams) -> int:
    """Product of the branching factors, counted without firing any rule"""
    count = 1
    for per_producer in options(params).values():
        for others in per_producer.values():
            count *= len(others)
    return count
