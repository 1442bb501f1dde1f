import random
from dataclasses import replace
from fractions import Fraction

import pytest

from errors import DSLSyntaxError, ValidationError
from conftest import SWAP_TEXT
from models import FALSE_PREDICATE, AggregateOp, Atom, Constant, LiteralKind, ObservableOp, Relation, Variable
from rule_dsl import RuleKind, format_program, parse_program, rule_shape, validate


def _codes(text):
    return {v.code for v in validate(parse_program(text, check=False))}


# Parsing tests
def test_parse_swap_program(swap_program):
    """Declarations and rules land in the program"""
    assert swap_program.horizon == 3
    assert swap_program.sorts == {"agent": ("a", "b")}
    assert [r.id for r in swap_program.rules] == ["choose", "move"]
    assert swap_program.predicates["score"].time_indexed
    assert swap_program.predicates["pick"].arity == 3
    assert swap_program.observables[0].operator is ObservableOp.SUM


def test_parse_literal_kinds():
    text = """
horizon 2.
sort s = {x, y}.
param rate = 3/6.
pred p(s, value, time).
pred q(s, value, time).
rule r split(time):
    p(X, V, D) and
    not q(X, V, D) and
    choose Y in s except X and
    choose Z in {x, y} and
    choose W from p(W, V, D) and
    eval mul(V, rate) -> M and
    T = sum U over p(_, U, D) by D
  implies q(Y, M, D + 1).
"""
    program = parse_program(text)
    rule = program.rules[0]
    kinds = [literal.kind for literal in rule.body]
    assert kinds == [
        LiteralKind.POSITIVE, LiteralKind.NEGATED, LiteralKind.CHOICE, LiteralKind.CHOICE,
        LiteralKind.CHOICE, LiteralKind.BUILTIN, LiteralKind.AGGREGATE,
    ]
    assert rule.body[2].candidates.form == "sort"
    assert rule.body[2].candidates.excluded == (Variable("X"),)
    assert rule.body[3].candidates.form == "set"
    assert rule.body[4].candidates.form == "pattern"
    assert rule.body[6].operator is AggregateOp.SUM
    assert rule.body[6].group == ("D",)
    assert rule.head[0].offset == 1
    assert rule.split == ("time",)
    assert program.params["rate"] == Fraction(1, 2)


def test_parse_rationals_and_negatives():
    program = parse_program("horizon 2. sort s = {x}. pred p(s, value, time). fact p(x, -4/6, 1). fact p(x, 8/4, 2).")
    assert program.facts[0].args[1] == Constant(Fraction(-2, 3))
    assert program.facts[1].args[1] == Constant(2)


def test_comments_are_ignored():
    program = parse_program("% a comment\nhorizon 2. % trailing\n")
    assert program.horizon == 2


def test_theorem_declaration(default_model):
    theorem = default_model.program.theorem("decreasingInterval")
    assert theorem.relation is Relation.STRICTLY_DECREASING
    assert (theorem.first, theorem.last) == (1, 7)


# Syntax error tests
def test_syntax_error_position():
    """Errors carry the line and column of the offending token"""
    with pytest.raises(DSLSyntaxError) as info:
        parse_program("horizon 2.\nsort s = {x}.\nrule r: p(X implies q(X).")
    assert info.value.line == 3


def test_syntax_error_at_end_of_input():
    with pytest.raises(DSLSyntaxError) as info:
        parse_program("horizon 2.\nrule r: p(X)")
    assert "end of input" in str(info.value)


def test_zero_denominator_rejected():
    with pytest.raises(DSLSyntaxError):
        parse_program("horizon 2. param k = 1/0.")


def test_duplicate_horizon_rejected():
    with pytest.raises(DSLSyntaxError):
        parse_program("horizon 2. horizon 3.")


# Validation tests
def test_valid_program_has_no_violations(swap_program):
    assert validate(swap_program) == []


def test_unknown_predicate():
    assert "unknown-predicate" in _codes("horizon 2. sort s = {x}. pred p(s, time). rule r: p(X, D) implies q(X, D).")


def test_arity_mismatch():
    assert "arity" in _codes("horizon 2. sort s = {x}. pred p(s, time). fact p(x).")


def test_unbound_consequent_variable():
    text = "horizon 2. sort s = {x}. pred p(s, time). pred q(s, time). rule r: p(X, D) implies q(Y, D)."
    assert "range-restriction" in _codes(text)


def test_unsafe_negation():
    text = "horizon 2. sort s = {x}. pred p(s, time). pred q(s, time). rule r: p(X, D) and not q(Y, D) implies q(X, D)."
    assert "unsafe-negation" in _codes(text)


def test_mixed_time_variables():
    text = ("horizon 2. sort s = {x}. pred p(s, time). pred q(s, time)."
            " rule r: p(X, D) and q(X, E) implies q(X, D).")
    assert "time" in _codes(text)


def test_split_requires_time_for_transition_rules():
    text = ("horizon 2. sort s = {x}. pred p(s, time). pred q(s, time)."
            " rule r split(s): p(X, D) implies q(X, D).")
    assert "split" in _codes(text)


def test_unknown_builtin():
    text = ("horizon 2. sort s = {x}. pred p(s, value, time)."
            " rule r: p(X, V, D) and eval frobnicate(V) -> W implies p(X, W, D + 1).")
    assert "builtin" in _codes(text)


def test_theorem_range_outside_horizon():
    text = ("horizon 3. sort s = {x}. pred p(s, value, time). observable o = max(p, 2)."
            " theorem t: o strictly_decreasing from 1 to 4.")
    assert "theorem" in _codes(text)


def test_false_must_be_the_only_consequent(swap_program):
    move = swap_program.rule("move")
    mixed = replace(move, head=(Atom(FALSE_PREDICATE, ()),) + move.head)
    program = replace(swap_program, rules=(swap_program.rule("choose"), mixed))
    assert "false" in {v.code for v in validate(program)}
    assert validate(replace(program, rules=(swap_program.rule("choose"), move))) == []


# statement appended to the swap program -> violation code it must raise
BROKEN_STATEMENTS = [
    ("fact pick(a, b).", "arity"),
    ("rule u1 split(time): score(P, X, D) implies pick(P, Q, D).", "range-restriction"),
    ("rule u2 split(time): score(P, X, D) and not pick(P, Q, D) implies pick(P, P, D).", "unsafe-negation"),
    ("rule u3 split(time): score(P, X, D) implies nothing(P, D).", "unknown-predicate"),
    ("rule u4 split(time): score(P, X, D) and eval frobnicate(X) -> Y implies score(P, Y, D + 1).", "builtin"),
    ("rule u5 split(time): score(P, X, D) and pick(P, O, E) implies pick(P, O, D).", "time"),
    ("rule u6 split(agent): score(P, X, D) implies pick(P, P, D).", "split"),
    ("rule u7 split(time): score(P, X, D) and choose P in agent implies pick(P, P, D).", "choice"),
    ("theorem tooLong: total constant from 1 to 9.", "theorem"),
    ("observable flat = max(agent, 1).", "observable"),
    ("pred late-2(agent) folds late at 7.", "fold"),
]


@pytest.mark.parametrize("statement, code", BROKEN_STATEMENTS)
def test_each_violation_is_reported(statement, code):
    assert code in _codes(SWAP_TEXT + statement)


def test_validation_reports_every_injected_violation():
    """Random mixes of broken statements: each one keeps its own code"""
    for seed in range(200):
        rng = random.Random(seed)
        picked = rng.sample(BROKEN_STATEMENTS, rng.randint(1, 4))
        text = SWAP_TEXT + "\n".join(statement for statement, _ in picked)
        assert {code for _, code in picked} <= _codes(text), seed


def test_validation_error_lists_every_violation():
    with pytest.raises(ValidationError) as info:
        parse_program("horizon 2. sort s = {x}. fact p(x). fact q(x).")
    assert len(info.value.violations) == 2


# Rule analysis tests
def test_rule_shapes(default_model):
    program = default_model.program
    assert rule_shape(program.rule("price"), program).kind is RuleKind.TRANSITION
    assert rule_shape(program.rule("price"), program).advances == ("price",)
    assert rule_shape(program.rule("theoremCheck"), program).kind is RuleKind.FINAL


# Formatter tests
def test_format_program_reparses_to_same_program(swap_program, default_model):
    for program in (swap_program, default_model.program):
        assert parse_program(format_program(program)) == program


def test_format_program_is_deterministic(default_model):
    text = format_program(default_model.program)
    assert format_program(parse_program(text)) == text


# Folded predicate declarations
def test_only_declared_folds_are_folded(swap_split):
    generic = parse_program("horizon 3. sort s = {x}. pred phase-9(s). fact phase-9(x).")
    assert generic.folded("phase-9") is None
    assert validate(generic) == []
    assert swap_split.program.folded("score-2") == ("score", 2)
    assert swap_split.program.folded("agent") is None


def test_fold_declaration_round_trips(swap_split):
    text = format_program(swap_split.program)
    assert "pred score-2(agent, value) folds score at 2." in text
    assert parse_program(text).folds == swap_split.program.folds


@pytest.mark.parametrize("declaration", [
    "pred p-4(s) folds p at 4.",
    "pred p-1(s, time) folds p at 1.",
    "pred q-1(s) folds q at 1. pred q(s, time).",
])
def test_bad_fold_declarations(declaration):
    assert "fold" in _codes("horizon 3. sort s = {x}. " + declaration)
