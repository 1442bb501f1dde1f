from dataclasses import replace

import pytest

from engine import Engine, match_count_instrumentation
from errors import FoldError, SpecializationError
from models import Fact, LiteralKind, Provenance
from rule_dsl import format_program, parse_program
from specializer import (
    default_directives,
    describe_plan,
    fold_predicates,
    predict_cost,
    specialize,
    trace_provenance,
    verify_equivalence,
)

BUMP_TEXT = """
horizon 2.
sort agent = {a, b}.
pred score(agent, value, time).
fact score(a, 1, 1).
rule bump split(time, agent):
    agent(P) and score(P, X, D) and eval add(X, 1) -> Y
  implies score(P, Y, D + 1).
"""


# Rule count tests
def test_default_market_rule_counts(default_split):
    """Split counts per family match the published table"""
    assert default_split.counts == {
        "producerChoice": 6,
        "totalOrders": 6,
        "totalSales": 6,
        "demandOrder": 6,
        "price": 6,
        "productionLevel": 18,
        "sale": 54,
        "theoremCheck": 1,
    }
    transition = sum(default_split.counts[r] for r in
                     ("totalOrders", "totalSales", "demandOrder", "price", "productionLevel", "sale"))
    assert transition == (4 + (1 + (1 * 3)) * 3) * 6 == 96
    assert default_split.total == 103


def test_predicted_factors_match_counts(default_model, default_split):
    assert predict_cost(default_model.program, default_model.directives) == default_split.counts


def test_default_directives(swap_program):
    assert default_directives(swap_program) == {"choose": ("time",), "move": ("time",)}


def test_split_rule_ids_and_provenance(default_split):
    assert default_split.provenance["sale-1-p1-c1"] == Provenance("sale", 1, (("C", "c1"), ("P", "p1")))
    assert default_split.provenance["price-6"] == Provenance("price", 6, ())
    assert len(default_split.rules_of("productionLevel")) == 18


def test_rules_are_ordered_by_sti(swap_split):
    assert [r.id for r in swap_split.program.rules] == ["choose-1", "move-1", "choose-2", "move-2"]


def test_split_rules_use_folded_predicates(swap_split):
    rule = swap_split.program.rule("move-2")
    assert rule.body[0].atom.predicate == "pick-2"
    assert rule.head[0].predicate == "score-3"
    assert swap_split.fold_map["score-3"] == ("score", 3)


def test_membership_literals_are_evaluated():
    program = parse_program(BUMP_TEXT)
    split = specialize(program)
    rules = split.rules_of("bump")
    assert [r.id for r in rules] == ["bump-1-a", "bump-1-b"]
    for rule in rules:
        assert all(l.kind is not LiteralKind.POSITIVE or l.atom.predicate != "agent" for l in rule.body)
    assert verify_equivalence(program, split).equivalent


def test_split_program_is_valid_text(default_split):
    text = format_program(default_split.program)
    assert parse_program(text) == default_split.program


def test_describe_and_trace(swap_split):
    assert describe_plan(swap_split) == [("choose", 1, 2), ("move", 1, 2)]
    assert trace_provenance(swap_split, "move-2") == "move-2 <- move at STI 2"


# Directive error tests
def test_choice_rules_split_by_time_only(default_model):
    with pytest.raises(SpecializationError):
        specialize(default_model.program, {"producerChoice": ("time", "producer")})


def test_unknown_directive_rule(swap_program):
    with pytest.raises(SpecializationError):
        specialize(swap_program, {"nothing": ("time",)})


def test_transition_rule_needs_time(swap_program):
    with pytest.raises(SpecializationError):
        specialize(swap_program, {"move": ()})


def test_horizon_too_short():
    program = parse_program("horizon 1. sort s = {x}.")
    with pytest.raises(SpecializationError):
        specialize(program)


def test_ambiguous_split_sort():
    text = """
horizon 2.
sort s = {x, y}.
pred link(s, s, time).
fact link(x, y, 1).
rule copy split(time, s): link(A, B, D) implies link(A, B, D + 1).
"""
    with pytest.raises(SpecializationError) as info:
        specialize(parse_program(text))
    assert "ambiguous" in str(info.value)


# Folding tests
def test_fold_and_unfold_fact(swap_program):
    fact = Fact("score", ("a", 1, 3))
    folded = fold_predicates(fact, "fold", swap_program)
    assert (folded.predicate, folded.args) == ("score-3", ("a", 1))
    assert fold_predicates(folded, "unfold", swap_program) == fact


def test_static_predicates_pass_through(swap_program):
    fact = Fact("agent", ("a",))
    assert fold_predicates(fact, "fold", swap_program) == fact


def test_unfold_unknown_predicate(swap_program):
    with pytest.raises(FoldError):
        fold_predicates(Fact("bogus-3", ()), "unfold", swap_program)


def test_fold_database(swap_program, swap_split):
    leaf = Engine(swap_program).replay((1, 0, 1, 0))
    folded = fold_predicates(leaf.database, "fold", swap_program)
    split_leaf = Engine(swap_split.program, swap_split.provenance).replay((1, 0, 1, 0))
    assert folded.fact_set() == split_leaf.database.fact_set()


# Equivalence tests
def test_swap_equivalence(swap_program, swap_split):
    report = verify_equivalence(swap_program, swap_split)
    assert report.equivalent
    assert report.compared == 16


def test_pruned_equivalence(clash_program):
    report = verify_equivalence(clash_program, specialize(clash_program))
    assert report.equivalent
    assert report.compared == 10


def test_small_market_equivalence(small_model, small_split):
    report = verify_equivalence(small_model.program, small_split)
    assert report.equivalent
    assert report.compared == 64


def test_sampled_equivalence(small_model, small_split):
    labels = [(0,) * 9, (1,) * 6 + (0,) * 3, (1, 0, 1, 0, 1, 0, 0, 0, 0)]
    report = verify_equivalence(small_model.program, small_split, sample=labels)
    assert report.equivalent
    assert report.compared == 3


def test_divergence_is_reported(swap_program, swap_split):
    """Dropping a split rule shows up as missing facts at the first leaf"""
    broken_program = replace(swap_split.program,
                             rules=tuple(r for r in swap_split.program.rules if r.id != "move-2"))
    broken = replace(swap_split, program=broken_program)
    report = verify_equivalence(swap_program, broken)
    assert not report.equivalent
    assert report.divergence.kind == "facts"
    assert report.divergence.label == "0.0.0.0"
    assert "missing score(" in report.divergence.detail


@pytest.mark.slow
def test_default_market_equivalence(default_model, default_split):
    report = verify_equivalence(default_model.program, default_split)
    assert report.equivalent
    assert report.compared == 32768


# Scan tests
def test_split_scans_are_flat(swap_split):
    engine = Engine(swap_split.program, swap_split.provenance, instrument=True)
    for _ in engine.enumerate():
        pass
    scans = match_count_instrumentation(engine)
    assert scans[("choose", 1)] == scans[("choose", 2)] == 2


def test_market_price_scans(small_model, small_split):
    """Generic price scans grow with the STI; split ones stay level"""
    generic = Engine(small_model.program, instrument=True)
    split = Engine(small_split.program, small_split.provenance, instrument=True)
    for engine in (generic, split):
        for _ in engine.enumerate():
            pass
    generic_curve = [v for _, v in generic.scans.curve("price")]
    split_curve = [v for _, v in split.scans.curve("price")]
    assert all(a < b for a, b in zip(generic_curve, generic_curve[1:]))
    assert len(set(split_curve)) == 1
