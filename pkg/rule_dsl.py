"""Parser, validator and canonical formatter for the `.rules` language.

The grammar is keyword based; one statement per declaration:

    horizon 7.
    sort producer = {p1, p2, p3}.
    param gamma = 2/3.
    pred price(producer, value, time).
    fact price(p1, 10, 1).
    observable interval = spread(price, 2).
    theorem decreasingInterval: interval strictly_decreasing from 1 to 7.
    rule price split(time):
        price(P, MP, D) and choose O in producer except P and price(O, OP, D)
      implies price(P, OP, D + 1).

The full EBNF lives in README.md.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Set, Tuple

import lark
from collections_extended import setlist
from lark import v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken, VisitError

from builtins_table import lookup
from errors import DSLSyntaxError, RuleEngineError, ValidationError
from models import (
    FALSE_PREDICATE,
    TIME_SORT,
    VALUE_SORT,
    AggregateOp,
    Atom,
    Candidates,
    Constant,
    Literal,
    LiteralKind,
    Observable,
    ObservableOp,
    PredicateDecl,
    Program,
    Relation,
    Rule,
    SourcePosition,
    Term,
    Theorem,
    Variable,
    normalize_value,
    render_value,
)

logger = logging.getLogger(__name__)

GRAMMAR = r'''
    start: statement*

    ?statement: horizon_decl
              | sort_decl
              | param_decl
              | pred_decl
              | fact_decl
              | observable_decl
              | theorem_decl
              | rule_decl

    horizon_decl: "horizon" INT "."
    sort_decl: "sort" NAME "=" "{" names "}" "."
    param_decl: "param" NAME "=" number "."
    pred_decl: "pred" NAME "(" names ")" fold_spec? "."
    fold_spec: "folds" NAME "at" INT
    fact_decl: "fact" atom "."
    observable_decl: "observable" NAME "=" NAME "(" NAME "," INT ")" "."
    theorem_decl: "theorem" NAME ":" NAME NAME "from" INT "to" INT "."
    rule_decl: "rule" NAME split? ":" body "implies" head "."

    split: "split" "(" names ")"
    names: NAME ("," NAME)*
    body: literal ("and" literal)*

    literal: atom                                     -> positive
           | "not" atom                               -> negated
           | "choose" VAR "in" NAME exclusion?        -> choice_sort
           | "choose" VAR "in" "{" terms "}"          -> choice_set
           | "choose" VAR "from" atom                 -> choice_pattern
           | "eval" NAME "(" terms? ")" "->" term     -> builtin
           | VAR "=" NAME VAR? "over" atom grouping?  -> aggregate

    exclusion: "except" terms
    grouping: "by" VAR ("," VAR)*

    head: "FALSE"                                     -> falsum
        | head_atom ("and" head_atom)*                -> conclusions
    head_atom: NAME "(" head_terms? ")"
    head_terms: head_term ("," head_term)*
    ?head_term: term
              | VAR "+" INT                           -> successor

    atom: NAME "(" terms? ")"
    terms: term ("," term)*
    ?term: VAR                                        -> variable
         | NAME                                       -> symbol
         | number
    number: NEG? INT (SLASH INT)?

    NAME: /[a-z][A-Za-z0-9_]*(-[A-Za-z0-9_]+)*/
    VAR: /[A-Z_][A-Za-z0-9_]*/
    NEG: "-"
    SLASH: "/"
    COMMENT: /%[^\n]*/

    %import common.INT
    %import common.WS
    %ignore WS
    %ignore COMMENT
'''

_PARSER = lark.Lark(GRAMMAR, parser="lalr", propagate_positions=True)


def _position(meta) -> Optional[SourcePosition]:
    if getattr(meta, "empty", True):
        return None
    return SourcePosition(meta.line, meta.column)


@dataclass(frozen=True)
class _Successor:
    variable: str
    increment: int
    token: lark.Token


class _ProgramBuilder(lark.Transformer):
    """Turns the parse tree into model dataclasses"""

    def start(self, statements):
        return list(statements)

    def names(self, tokens):
        return list(tokens)

    def horizon_decl(self, items):
        return ("horizon", items[0], int(items[0]))

    def sort_decl(self, items):
        name, instances = items
        return ("sort", name, tuple(str(t) for t in instances))

    def param_decl(self, items):
        name, number = items
        return ("param", name, number.value)

    def pred_decl(self, items):
        name, sorts = items[0], items[1]
        fold = items[2] if len(items) > 2 else None
        return ("pred", name, (PredicateDecl(str(name), tuple(str(s) for s in sorts)), fold))

    def fold_spec(self, items):
        family, sti = items
        return str(family), int(sti)

    def fact_decl(self, items):
        return ("fact", None, items[0])

    def observable_decl(self, items):
        name, op, predicate, argument = items
        try:
            operator = ObservableOp(str(op))
        except ValueError:
            raise DSLSyntaxError(f"unknown observable operator {op}", op.line, op.column) from None
        return ("observable", name, Observable(str(name), operator, str(predicate), int(argument)))

    def theorem_decl(self, items):
        name, observable, relation, first, last = items
        try:
            rel = Relation(str(relation))
        except ValueError:
            raise DSLSyntaxError(f"unknown relation {relation}", relation.line, relation.column) from None
        return ("theorem", name, Theorem(str(name), str(observable), rel, int(first), int(last)))

    @v_args(meta=True)
    def rule_decl(self, meta, items):
        name = items[0]
        split = items[1] if len(items) == 4 else None
        body, head = items[-2], items[-1]
        return ("rule", name, Rule(str(name), tuple(body), tuple(head), split, _position(meta)))

    def split(self, items):
        return tuple(str(t) for t in items[0])

    def body(self, literals):
        return list(literals)

    @v_args(meta=True)
    def positive(self, meta, items):
        return Literal(LiteralKind.POSITIVE, atom=items[0], position=_position(meta))

    @v_args(meta=True)
    def negated(self, meta, items):
        return Literal(LiteralKind.NEGATED, atom=items[0], position=_position(meta))

    @v_args(meta=True)
    def choice_sort(self, meta, items):
        excluded = items[2] if len(items) == 3 else ()
        return Literal(
            LiteralKind.CHOICE,
            variable=str(items[0]),
            candidates=Candidates(sort=str(items[1]), excluded=tuple(excluded)),
            position=_position(meta),
        )

    @v_args(meta=True)
    def choice_set(self, meta, items):
        return Literal(
            LiteralKind.CHOICE,
            variable=str(items[0]),
            candidates=Candidates(members=tuple(items[1])),
            position=_position(meta),
        )

    @v_args(meta=True)
    def choice_pattern(self, meta, items):
        return Literal(
            LiteralKind.CHOICE,
            variable=str(items[0]),
            candidates=Candidates(source=items[1]),
            position=_position(meta),
        )

    @v_args(meta=True)
    def builtin(self, meta, items):
        inputs = items[1] if len(items) == 3 else ()
        return Literal(
            LiteralKind.BUILTIN,
            function=str(items[0]),
            inputs=tuple(inputs),
            output=items[-1],
            position=_position(meta),
        )

    @v_args(meta=True)
    def aggregate(self, meta, items):
        output, op = items[0], items[1]
        try:
            operator = AggregateOp(str(op))
        except ValueError:
            raise DSLSyntaxError(f"unknown aggregate operator {op}", op.line, op.column) from None
        rest = list(items[2:])
        target = str(rest.pop(0)) if isinstance(rest[0], lark.Token) else None
        source = rest.pop(0)
        group = rest.pop(0) if rest else ()
        return Literal(
            LiteralKind.AGGREGATE,
            atom=source,
            variable=str(output),
            operator=operator,
            target=target,
            group=tuple(group),
            position=_position(meta),
        )

    def exclusion(self, items):
        return items[0]

    def grouping(self, tokens):
        return tuple(str(t) for t in tokens)

    def falsum(self, _items):
        return [Atom(FALSE_PREDICATE, ())]

    def conclusions(self, atoms):
        return list(atoms)

    def head_atom(self, items):
        name = str(items[0])
        terms = items[1] if len(items) == 2 else []
        args: List[Term] = []
        offset = 0
        for index, term in enumerate(terms):
            if isinstance(term, _Successor):
                if term.increment != 1:
                    raise DSLSyntaxError("only +1 time offsets are supported", term.token.line, term.token.column)
                if index != len(terms) - 1:
                    raise DSLSyntaxError("a time offset must be the last argument", term.token.line, term.token.column)
                offset = 1
                term = Variable(term.variable)
            args.append(term)
        return Atom(name, tuple(args), offset)

    def head_terms(self, terms):
        return list(terms)

    def successor(self, items):
        variable, increment = items
        return _Successor(str(variable), int(increment), variable)

    def atom(self, items):
        return Atom(str(items[0]), tuple(items[1]) if len(items) == 2 else ())

    def terms(self, terms):
        return tuple(terms)

    def variable(self, items):
        return Variable(str(items[0]))

    def symbol(self, items):
        return Constant(str(items[0]))

    def number(self, items):
        negative = bool(items) and items[0].type == "NEG"
        digits = [t for t in items if t.type == "INT"]
        value = Fraction(int(digits[0]))
        if len(digits) == 2:
            if int(digits[1]) == 0:
                slash = next(t for t in items if t.type == "SLASH")
                raise DSLSyntaxError("zero denominator", slash.line, slash.column)
            value = Fraction(int(digits[0]), int(digits[1]))
        return Constant(normalize_value(-value if negative else value))


def _assemble(statements) -> Program:
    horizon = 0
    seen_horizon = False
    sorts: Dict[str, Tuple[str, ...]] = {}
    params = {}
    predicates: Dict[str, PredicateDecl] = {}
    facts: List[Atom] = []
    folds: Dict[str, Tuple[str, int]] = {}
    rules: List[Rule] = []
    observables: List[Observable] = []
    theorems: List[Theorem] = []
    names: Dict[str, Set[str]] = defaultdict(set)

    for kind, token, payload in statements:
        if token is not None and kind != "horizon":
            if str(token) in names[kind]:
                raise DSLSyntaxError(f"duplicate {kind} {token}", token.line, token.column)
            names[kind].add(str(token))
        if kind == "horizon":
            if seen_horizon:
                raise DSLSyntaxError("duplicate horizon declaration", token.line, token.column)
            seen_horizon = True
            horizon = payload
        elif kind == "sort":
            sorts[str(token)] = payload
        elif kind == "param":
            params[str(token)] = payload
        elif kind == "pred":
            decl, fold = payload
            predicates[str(token)] = decl
            if fold is not None:
                folds[str(token)] = fold
        elif kind == "fact":
            facts.append(payload)
        elif kind == "rule":
            rules.append(payload)
        elif kind == "observable":
            observables.append(payload)
        elif kind == "theorem":
            theorems.append(payload)

    return Program(
        horizon=horizon,
        sorts=sorts,
        params=params,
        predicates=predicates,
        facts=tuple(facts),
        rules=tuple(rules),
        observables=tuple(observables),
        theorems=tuple(theorems),
        folds=folds,
    )


def _syntax_error(exc: UnexpectedInput, text: str) -> DSLSyntaxError:
    line, column = exc.line, exc.column
    if line is None or line < 1:
        lines = text.splitlines() or [""]
        line, column = len(lines), len(lines[-1]) + 1
    if isinstance(exc, UnexpectedToken):
        if exc.token.type == "$END":
            message = "unexpected end of input"
        else:
            message = f"unexpected {exc.token!s}"
        expected = sorted(exc.expected)[:6]
        if expected:
            message += f", expected one of {', '.join(expected)}"
    elif isinstance(exc, UnexpectedCharacters):
        message = f"unexpected character {exc.char!r}"
    elif isinstance(exc, UnexpectedEOF):
        message = "unexpected end of input"
    else:
        message = str(exc).splitlines()[0]
    return DSLSyntaxError(message, line, column)


def parse_program(text: str, check: bool = True) -> Program:
    """Parse `.rules` text into a Program.

    With `check` (the default) the program is validated and a ValidationError
    carrying every violation is raised if it is not well formed.
    """
    try:
        tree = _PARSER.parse(text)
    except UnexpectedInput as e:
        raise _syntax_error(e, text) from None
    try:
        statements = _ProgramBuilder().transform(tree)
    except VisitError as e:
        if isinstance(e.orig_exc, RuleEngineError):
            raise e.orig_exc from None
        raise
    program = _assemble(statements)
    if check:
        violations = validate(program)
        if violations:
            raise ValidationError(violations)
    return program


# Rule analysis


class RuleKind(str, Enum):
    STATIC = "static"
    TRANSITION = "transition"
    FINAL = "final"


@dataclass(frozen=True)
class RuleShape:
    kind: RuleKind
    time_variable: Optional[str]
    # (predicate, read under negation / aggregation / choice)
    reads: Tuple[Tuple[str, bool], ...]
    # predicates written at the evaluation level (offset 0)
    writes: Tuple[str, ...]
    # predicates written one STI ahead
    advances: Tuple[str, ...]


def _atoms(rule: Rule) -> Iterable[Tuple[Atom, bool]]:
    for literal in rule.body:
        pattern = literal.pattern()
        if pattern is not None:
            yield pattern, False
    for atom in rule.head:
        if atom.predicate != FALSE_PREDICATE:
            yield atom, True


def time_terms(rule: Rule, program: Program) -> List[Term]:
    terms = []
    for atom, _ in _atoms(rule):
        decl = program.declaration(atom.predicate)
        if decl is not None and decl.time_indexed and len(atom.args) == decl.arity:
            terms.append(atom.args[-1])
    return terms


def rule_shape(rule: Rule, program: Program) -> RuleShape:
    terms = time_terms(rule, program)
    variables = setlist(t.name for t in terms if isinstance(t, Variable) and not t.anonymous)
    if variables:
        kind, time_variable = RuleKind.TRANSITION, variables[0]
    elif terms:
        kind, time_variable = RuleKind.FINAL, None
    else:
        kind, time_variable = RuleKind.STATIC, None

    reads = []
    for literal in rule.body:
        pattern = literal.pattern()
        if pattern is None:
            continue
        nonmonotone = literal.kind is not LiteralKind.POSITIVE
        reads.append((pattern.predicate, nonmonotone))
    writes = tuple(a.predicate for a in rule.head if a.offset == 0 and a.predicate != FALSE_PREDICATE)
    advances = tuple(a.predicate for a in rule.head if a.offset == 1)
    return RuleShape(kind, time_variable, tuple(reads), writes, advances)


def variable_sorts(rule: Rule, program: Program) -> Dict[str, Set[str]]:
    """Sorts each rule variable is used at, inferred from declarations"""
    sorts: Dict[str, Set[str]] = defaultdict(set)
    for atom, _ in _atoms(rule):
        decl = program.declaration(atom.predicate)
        if decl is None or decl.arity != len(atom.args):
            continue
        for term, sort in zip(atom.args, decl.sorts):
            if isinstance(term, Variable) and not term.anonymous and sort in program.sorts:
                sorts[term.name].add(sort)
    for literal in rule.body:
        if literal.kind is LiteralKind.CHOICE and literal.candidates.sort is not None:
            sorts[literal.variable].add(literal.candidates.sort)
    return sorts


# Validation


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    rule: Optional[str] = None
    position: Optional[SourcePosition] = None

    def __str__(self) -> str:
        where = f" ({self.position})" if self.position else ""
        owner = f"rule {self.rule}: " if self.rule else ""
        return f"{owner}{self.message}{where}"


class _Checker:
    def __init__(self, program: Program):
        self.program = program
        self.violations: List[Violation] = []

    def report(self, code: str, message: str, rule: Optional[Rule] = None, position=None):
        self.violations.append(Violation(code, message, rule.id if rule else None,
                                         position or (rule.position if rule else None)))

    def check_atom(self, atom: Atom, rule: Optional[Rule] = None, position=None) -> bool:
        decl = self.program.declaration(atom.predicate)
        if decl is None:
            self.report("unknown-predicate", f"unknown predicate {atom.predicate}", rule, position)
            return False
        if decl.arity != len(atom.args):
            self.report(
                "arity",
                f"{atom.predicate} takes {decl.arity} arguments, got {len(atom.args)}",
                rule,
                position,
            )
            return False
        return True

    def check_declarations(self):
        program = self.program
        if program.horizon < 1:
            self.report("horizon", "horizon must be a positive integer")
        for name, instances in program.sorts.items():
            if name in (TIME_SORT, VALUE_SORT):
                self.report("sort", f"sort name {name} is reserved")
            if not instances:
                self.report("sort", f"sort {name} has no instances")
            if len(setlist(instances)) != len(instances):
                self.report("sort", f"sort {name} lists an instance twice")
            if name in program.predicates:
                self.report("sort", f"sort {name} collides with a predicate of the same name")
        for decl in program.predicates.values():
            for index, sort in enumerate(decl.sorts):
                if sort == TIME_SORT and index != len(decl.sorts) - 1:
                    self.report("predicate", f"time must be the last argument of {decl.name}")
                elif sort not in program.sorts and sort not in (TIME_SORT, VALUE_SORT):
                    self.report("unknown-sort", f"predicate {decl.name} uses unknown sort {sort}")
            fold = program.folded(decl.name)
            if fold is not None:
                family, sti = fold
                if decl.time_indexed:
                    self.report("fold", f"folded predicate {decl.name} cannot keep a time argument")
                if not 1 <= sti <= program.horizon:
                    self.report("fold", f"folded predicate {decl.name} names STI {sti} outside 1..{program.horizon}")
                if family in program.predicates:
                    self.report("fold", f"folded predicate {decl.name} shadows declared predicate {family}")
        for fact in program.facts:
            if self.check_atom(fact) and not fact.ground:
                self.report("fact", f"fact {format_atom(fact)} is not ground")
        families = program.folded_families()
        for observable in program.observables:
            decl = program.declaration(observable.predicate)
            if decl is not None and decl.time_indexed:
                width = decl.arity - 1
            elif observable.predicate in families:
                width = program.predicates[next(iter(families[observable.predicate].values()))].arity
            else:
                self.report(
                    "observable",
                    f"observable {observable.name} reads {observable.predicate}, "
                    f"which is neither time-indexed nor folded",
                )
                continue
            if observable.operator is not ObservableOp.COUNT and not 1 <= observable.argument <= width:
                self.report("observable", f"observable {observable.name} argument {observable.argument} out of range")
        observable_names = {o.name for o in program.observables}
        for theorem in program.theorems:
            if theorem.observable not in observable_names:
                self.report("theorem", f"theorem {theorem.name} references unknown observable {theorem.observable}")
            if not 1 <= theorem.first < theorem.last <= program.horizon:
                self.report(
                    "theorem",
                    f"theorem {theorem.name} range {theorem.first}..{theorem.last} "
                    f"is not within 1..{program.horizon}",
                )
        rule_ids = setlist()
        for rule in program.rules:
            if rule.id in rule_ids:
                self.report("rule", f"duplicate rule id {rule.id}", rule)
            rule_ids.add(rule.id)

    def check_rule(self, rule: Rule):
        program = self.program
        terms = time_terms(rule, program)
        variables = {t.name for t in terms if isinstance(t, Variable)}
        constants = [t for t in terms if isinstance(t, Constant)]
        if len(variables) > 1:
            self.report("time", f"mixes time variables {', '.join(sorted(variables))}", rule)
        if variables and constants:
            self.report("time", "a transition rule cannot refer to a constant STI", rule)
        shape = rule_shape(rule, program)
        time_variable = shape.time_variable

        bound: Set[str] = {time_variable} if time_variable else set()
        for literal in rule.body:
            self.check_literal(rule, literal, bound)

        if any(a.predicate == FALSE_PREDICATE for a in rule.head) and len(rule.head) > 1:
            self.report("false", "FALSE must be the only consequent", rule)
        for atom in rule.head:
            if atom.predicate == FALSE_PREDICATE:
                continue
            if not self.check_atom(atom, rule):
                continue
            decl = program.declaration(atom.predicate)
            for name in atom.variables():
                if name not in bound:
                    self.report("range-restriction", f"consequent variable {name} is never bound", rule)
            if atom.offset:
                last = atom.args[-1]
                if not decl.time_indexed or not isinstance(last, Variable) or last.name != time_variable:
                    self.report("time", f"+1 applies only to the time variable of {atom.predicate}", rule)
            if shape.kind is RuleKind.TRANSITION and not decl.time_indexed:
                self.report("time", f"transition rule writes {atom.predicate}, which is not time-indexed", rule)
            if shape.kind is not RuleKind.TRANSITION and decl.time_indexed and isinstance(atom.args[-1], Variable):
                self.report("time", f"consequent {atom.predicate} needs a time variable or constant", rule)

        if rule.split is not None:
            sorts = variable_sorts(rule, program)
            used = set().union(*sorts.values()) if sorts else set()
            for dimension in rule.split:
                if dimension == TIME_SORT:
                    if shape.kind is not RuleKind.TRANSITION:
                        self.report("split", "split by time needs a transition rule", rule)
                elif dimension not in program.sorts:
                    self.report("unknown-sort", f"split names unknown sort {dimension}", rule)
                elif dimension not in used:
                    self.report("split", f"split sort {dimension} is not the sort of any variable", rule)
            if shape.kind is RuleKind.TRANSITION and TIME_SORT not in rule.split:
                self.report("split", "a transition rule must be split by time", rule)

    def check_literal(self, rule: Rule, literal: Literal, bound: Set[str]):
        position = literal.position
        kind = literal.kind
        if kind is LiteralKind.POSITIVE:
            self.check_atom(literal.atom, rule, position)
            bound.update(literal.atom.variables())
        elif kind is LiteralKind.NEGATED:
            self.check_atom(literal.atom, rule, position)
            for name in literal.atom.variables():
                if name not in bound:
                    self.report("unsafe-negation", f"unsafe negation: variable {name} is not bound", rule, position)
        elif kind is LiteralKind.CHOICE:
            name = literal.variable
            if name in bound:
                self.report("choice", f"choice variable {name} is already bound", rule, position)
            candidates = literal.candidates
            if candidates.sort is not None:
                if candidates.sort not in self.program.sorts:
                    self.report("unknown-sort", f"choice over unknown sort {candidates.sort}", rule, position)
                self.check_bound(rule, candidates.excluded, bound, position)
            elif candidates.source is not None:
                source = candidates.source
                if self.check_atom(source, rule, position):
                    if name not in source.variables():
                        self.report("choice", f"choice variable {name} does not occur in its pattern", rule, position)
                    for other in source.variables():
                        if other != name and other not in bound:
                            self.report("choice", f"choice pattern variable {other} is not bound", rule, position)
            else:
                if not candidates.members:
                    self.report("choice", "empty candidate set", rule, position)
                self.check_bound(rule, candidates.members, bound, position)
            bound.add(name)
        elif kind is LiteralKind.BUILTIN:
            builtin = lookup(literal.function)
            if builtin is None:
                self.report("builtin", f"unknown builtin {literal.function}", rule, position)
            elif builtin.arity != len(literal.inputs):
                self.report(
                    "builtin",
                    f"builtin {literal.function} takes {builtin.arity} inputs, got {len(literal.inputs)}",
                    rule,
                    position,
                )
            self.check_bound(rule, literal.inputs, bound, position)
            if isinstance(literal.output, Variable):
                if literal.output.anonymous:
                    self.report("builtin", "builtin output cannot be anonymous", rule, position)
                bound.add(literal.output.name)
        elif kind is LiteralKind.AGGREGATE:
            name = literal.variable
            if name in bound:
                self.report("aggregate", f"aggregate output {name} is not fresh", rule, position)
            if self.check_atom(literal.atom, rule, position):
                pattern_vars = set(literal.atom.variables())
                if literal.operator is AggregateOp.COUNT:
                    if literal.target is not None:
                        self.report("aggregate", "count takes no aggregated variable", rule, position)
                elif literal.target is None or literal.target not in pattern_vars:
                    self.report("aggregate", f"{literal.operator.value} needs a variable of its pattern", rule, position)
                elif literal.target in literal.group:
                    self.report("aggregate", f"aggregated variable {literal.target} is also grouped", rule, position)
                for group in literal.group:
                    if group not in bound:
                        self.report("aggregate", f"grouping variable {group} is not bound", rule, position)
                    if group not in pattern_vars:
                        self.report("aggregate", f"grouping variable {group} is not in the pattern", rule, position)
                for other in pattern_vars & bound:
                    if other not in literal.group:
                        self.report("aggregate", f"bound variable {other} must be listed after by", rule, position)
            bound.add(name)

    def check_bound(self, rule: Rule, terms: Iterable[Term], bound: Set[str], position):
        for term in terms:
            if isinstance(term, Variable) and (term.anonymous or term.name not in bound):
                self.report("unbound", f"variable {term.name} is not bound", rule, position)

    def check_final_rules(self):
        final_writes = set()
        shapes = {rule.id: rule_shape(rule, self.program) for rule in self.program.rules}
        for rule in self.program.rules:
            if shapes[rule.id].kind is RuleKind.FINAL:
                final_writes.update(shapes[rule.id].writes)
        for rule in self.program.rules:
            if shapes[rule.id].kind is RuleKind.FINAL:
                continue
            for predicate, _ in shapes[rule.id].reads:
                if predicate in final_writes:
                    self.report("time", f"reads {predicate}, which only a final rule derives", rule)


def validate(program: Program) -> List[Violation]:
    """Return every invariant violation of `program`; an empty list means valid"""
    checker = _Checker(program)
    checker.check_declarations()
    for rule in program.rules:
        checker.check_rule(rule)
    checker.check_final_rules()
    return checker.violations


# Formatting


def format_term(term: Term) -> str:
    if isinstance(term, Variable):
        return term.name
    return render_value(term.value)


def format_atom(atom: Atom) -> str:
    args = [format_term(t) for t in atom.args]
    if atom.offset:
        args[-1] = f"{args[-1]} + {atom.offset}"
    return f"{atom.predicate}({', '.join(args)})"


def format_literal(literal: Literal) -> str:
    kind = literal.kind
    if kind is LiteralKind.POSITIVE:
        return format_atom(literal.atom)
    if kind is LiteralKind.NEGATED:
        return f"not {format_atom(literal.atom)}"
    if kind is LiteralKind.CHOICE:
        candidates = literal.candidates
        if candidates.sort is not None:
            text = f"choose {literal.variable} in {candidates.sort}"
            if candidates.excluded:
                text += " except " + ", ".join(format_term(t) for t in candidates.excluded)
            return text
        if candidates.source is not None:
            return f"choose {literal.variable} from {format_atom(candidates.source)}"
        return f"choose {literal.variable} in {{{', '.join(format_term(t) for t in candidates.members)}}}"
    if kind is LiteralKind.BUILTIN:
        inputs = ", ".join(format_term(t) for t in literal.inputs)
        return f"eval {literal.function}({inputs}) -> {format_term(literal.output)}"
    target = f" {literal.target}" if literal.target else ""
    group = f" by {', '.join(literal.group)}" if literal.group else ""
    return f"{literal.variable} = {literal.operator.value}{target} over {format_atom(literal.atom)}{group}"


def format_rule(rule: Rule) -> str:
    split = f" split({', '.join(rule.split)})" if rule.split is not None else ""
    lines = [f"rule {rule.id}{split}:"]
    for index, literal in enumerate(rule.body):
        joiner = " and" if index < len(rule.body) - 1 else ""
        lines.append(f"    {format_literal(literal)}{joiner}")
    lines.append("  implies")
    if rule.falsum:
        lines.append("    FALSE.")
    else:
        heads = [format_atom(a) for a in rule.head]
        for index, head in enumerate(heads):
            lines.append(f"    {head}{' and' if index < len(heads) - 1 else '.'}")
    return "\n".join(lines)


def _fold_suffix(program: Program, name: str) -> str:
    fold = program.folded(name)
    return f" folds {fold[0]} at {fold[1]}" if fold else ""


def format_program(program: Program) -> str:
    """Deterministic canonical text; parse_program(format_program(p)) == p"""
    sections: List[List[str]] = [[f"horizon {program.horizon}."]]
    sections.append([f"sort {name} = {{{', '.join(items)}}}." for name, items in program.sorts.items()])
    sections.append([f"param {name} = {render_value(value)}." for name, value in program.params.items()])
    sections.append([f"pred {d.name}({', '.join(d.sorts)}){_fold_suffix(program, d.name)}." for d in program.predicates.values()])
    sections.append([f"fact {format_atom(f)}." for f in program.facts])
    sections.append([
        f"observable {o.name} = {o.operator.value}({o.predicate}, {o.argument})." for o in program.observables
    ])
    sections.append([
        f"theorem {t.name}: {t.observable} {t.relation.value} from {t.first} to {t.last}."
        for t in program.theorems
    ])
    blocks = ["\n".join(section) for section in sections if section]
    blocks.extend(format_rule(rule) for rule in program.rules)
    return "\n\n".join(blocks) + "\n"
