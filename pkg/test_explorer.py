import csv
import io
import json
import random
from fractions import Fraction

import pytest

from engine import Engine
from errors import ConfigError, EnvelopeShapeError, ExplorationAborted, ObservableError, RuleEngineError
from explorer import (
    Bound,
    Envelope,
    RatioStats,
    check_theorem,
    envelope_merge,
    explore,
    explore_async,
    explore_parallel,
    export_report,
)
from models import (
    AssumptionLabel,
    ChoicePointId,
    ChoiceSelection,
    Mode,
    ModelParams,
    Relation,
    Status,
    Theorem,
    TrajectoryRecord,
    Verdict,
)
from pc_model import build_model, theorem_decreasing_interval
from rule_dsl import parse_program


def _record(label, values, name="v"):
    """Completed record with given label indices and observable values"""
    selections = tuple(ChoiceSelection(ChoicePointId("pick", depth, ()), index, index)
                       for depth, index in enumerate(label))
    return TrajectoryRecord(AssumptionLabel(selections), Status.COMPLETED, {name: tuple(values)})


# Theorem tests
def test_check_theorem_relations():
    record = _record((), [5, 4, 4, 3])
    assert check_theorem(record, Theorem("t", "v", Relation.NON_INCREASING, 1, 4))
    assert not check_theorem(record, Theorem("t", "v", Relation.STRICTLY_DECREASING, 1, 4))
    assert check_theorem(record, Theorem("t", "v", Relation.STRICTLY_DECREASING, 1, 2))
    assert check_theorem(record, Theorem("t", "v", Relation.CONSTANT, 2, 3))


def test_check_theorem_range_beyond_values():
    record = _record((), [5, 4, 3])
    with pytest.raises(ObservableError) as info:
        check_theorem(record, Theorem("t", "v", Relation.CONSTANT, 1, 5))
    assert "1..3" in str(info.value)


def test_check_theorem_undefined_value():
    record = _record((), [5, None, 3])
    with pytest.raises(ObservableError) as info:
        check_theorem(record, Theorem("t", "v", Relation.STRICTLY_DECREASING, 1, 3))
    assert info.value.sti == 2


# Envelope tests
def test_bound_merge_prefers_smaller_label_on_ties():
    left = Bound(1, 5, (1,), (1,))
    right = Bound(1, 5, (0,), (2,))
    merged = left.merge(right)
    assert merged.argmin == (0,)
    assert merged.argmax == (1,)


def test_envelope_merge_shape_mismatch():
    with pytest.raises(EnvelopeShapeError):
        envelope_merge(Envelope.empty(["v"], 3), Envelope.empty(["v"], 4))


@pytest.mark.parametrize("seed", range(10))
def test_envelope_merge_is_associative_and_commutative(seed):
    rng = random.Random(seed)
    envelopes = []
    for index in range(3):
        values = [Fraction(rng.randint(-5, 5), rng.randint(1, 3)) for _ in range(3)]
        envelopes.append(Envelope.of(_record((index, rng.randint(0, 2)), values), 3))
    a, b, c = envelopes
    assert envelope_merge(a, b) == envelope_merge(b, a)
    assert envelope_merge(envelope_merge(a, b), c) == envelope_merge(a, envelope_merge(b, c))
    merged = envelope_merge(envelope_merge(a, b), c)
    assert all(merged.contains(_record((), [e.bounds["v"][i].min for i in range(3)])) for e in envelopes)
    assert envelope_merge(Envelope.empty(["v"], 3), a) == a


def test_envelope_merge_laws_over_many_random_cases():
    for seed in range(1000):
        rng = random.Random(seed)
        width = rng.randint(1, 4)
        envelopes = [
            Envelope.of(_record(tuple(rng.randint(0, 2) for _ in range(3)),
                                [Fraction(rng.randint(-9, 9), rng.randint(1, 4)) for _ in range(width)]), width)
            for _ in range(3)
        ]
        a, b, c = envelopes
        assert envelope_merge(a, b) == envelope_merge(b, a), seed
        assert envelope_merge(envelope_merge(a, b), c) == envelope_merge(a, envelope_merge(b, c)), seed
        assert envelope_merge(a, a) == a, seed


def test_ratio_stats():
    stats = RatioStats().observe([8, 4, 3, None, 1])
    assert stats.min == Fraction(1, 2)
    assert stats.max == Fraction(3, 4)
    merged = stats.merge(RatioStats(Fraction(1, 4), None))
    assert merged.min == Fraction(1, 4)
    assert merged.max == Fraction(3, 4)


# Exploration tests
def test_survey_swap_envelope(swap_program):
    report = explore(swap_program, mode=Mode.SURVEY)
    assert report.verdict is Verdict.SURVEYED
    assert report.completed == 16
    assert report.pruned == 0
    total = report.envelope.bounds["total"]
    assert (total[1].min, total[1].max) == (2, 4)
    assert total[1].argmin == (0, 0, 0, 0)
    assert total[1].argmax == (1, 1, 0, 0)


def test_survey_counts_pruned_leaves(clash_program):
    report = explore(clash_program, mode="survey")
    assert (report.completed, report.pruned) == (4, 6)


def test_prove_small_market(small_model):
    report = explore(small_model.program)
    assert report.verdict is Verdict.NECESSARY
    assert report.completed == 64
    assert report.counterexample is None
    assert report.theorem == "decreasingInterval"


def test_prove_small_market_split(small_model, small_split):
    generic = explore(small_model.program)
    split = explore(small_split.program, provenance=small_split.provenance)
    assert export_report(generic, "json") == export_report(split, "json")


def test_refute_inverted_theorem(small_params):
    theorem = Theorem("increasing", "interval", Relation.STRICTLY_INCREASING, 1, small_params.horizon)
    model = build_model(small_params, theorem)
    report = explore(model.program, mode=Mode.REFUTE)
    assert report.verdict is Verdict.COUNTEREXAMPLE
    assert report.counterexample_label == "0.0.0.0.0.0.0.0.0"
    assert report.completed == 1


def test_prove_collects_first_counterexample(small_params):
    theorem = Theorem("increasing", "interval", Relation.STRICTLY_INCREASING, 1, small_params.horizon)
    model = build_model(small_params, theorem)
    report = explore(model.program, mode=Mode.PROVE)
    assert report.verdict is Verdict.COUNTEREXAMPLE
    assert report.completed == 64
    assert report.counterexample_label == "0.0.0.0.0.0.0.0.0"


def test_half_gain_stalls():
    """With gain 1/2 two producers choosing each other meet and stop moving"""
    params = ModelParams(producers=3, consumers=1, horizon=4, gamma="1/2")
    report = explore(build_model(params).program, mode=Mode.REFUTE)
    assert report.verdict is Verdict.COUNTEREXAMPLE


def test_unknown_theorem(small_model):
    with pytest.raises(RuleEngineError):
        explore(small_model.program, theorem="nothing")


def test_prove_without_theorem(swap_program):
    with pytest.raises(RuleEngineError):
        explore(swap_program, mode=Mode.PROVE)


def test_theorem_range_beyond_horizon(swap_program):
    theorem = Theorem("t", "total", Relation.CONSTANT, 1, 5)
    with pytest.raises(ConfigError) as info:
        explore(swap_program, theorem=theorem)
    assert "1..3" in str(info.value)
    with pytest.raises(ConfigError):
        explore(swap_program, theorem=Theorem("t", "missing", Relation.CONSTANT, 1, 2))


def test_envelope_extremes_are_reached_by_their_labels(swap_program, small_model):
    for program in (swap_program, small_model.program):
        report = explore(program, mode=Mode.SURVEY)
        engine = Engine(program)
        for name, bounds in report.envelope.bounds.items():
            for sti, bound in enumerate(bounds, start=1):
                if bound is None:
                    continue
                assert engine.replay(bound.argmin).observables[name][sti - 1] == bound.min
                assert engine.replay(bound.argmax).observables[name][sti - 1] == bound.max


@pytest.mark.parametrize("gamma", ["2/3", "1/2"])
def test_prove_and_refute_agree(gamma):
    program = build_model(ModelParams(producers=3, consumers=1, horizon=4, gamma=gamma)).program
    proved = explore(program, mode=Mode.PROVE)
    refuted = explore(program, mode=Mode.REFUTE)
    assert (proved.verdict is Verdict.NECESSARY) == (refuted.counterexample is None)
    assert proved.counterexample_label == refuted.counterexample_label


def test_keep_mapping(swap_program):
    report = explore(swap_program, mode=Mode.SURVEY, keep_mapping=True)
    assert len(report.mapping) == 16
    assert report.mapping[(1, 0, 1, 0)]["total"] == (3, 3, 3)


def test_engine_error_aborts_with_partial_report():
    text = """
horizon 3.
sort s = {x, y}.
pred p(s, value, time).
pred pick(s, time).
fact p(x, 1, 1).
fact p(y, 0, 1).
observable low = min(p, 2).
rule choose: p(x, V, D) and choose S in s implies pick(S, D).
rule invert: pick(S, D) and p(S, V, D) and eval div(1, V) -> W implies p(S, W, D + 1).
"""
    with pytest.raises(ExplorationAborted) as info:
        explore(parse_program(text), mode=Mode.SURVEY)
    report = info.value.report
    assert not report.valid
    assert report.completed == 2


def test_trace_agrees_with_exploration(small_model):
    """Replayed observables equal the recorded mapping for random labels"""
    report = explore(small_model.program, keep_mapping=True)
    rng = random.Random(7)
    engine = Engine(small_model.program)
    for label in rng.sample(sorted(report.mapping), 20):
        assert engine.replay(label).observables == report.mapping[label]


# Parallel tests
@pytest.mark.parametrize("parallelism", [1, 2, 3])
def test_parallel_reports_identical(small_model, parallelism):
    serial = export_report(explore(small_model.program, keep_mapping=True), "json")
    parallel = explore_parallel(small_model.program, keep_mapping=True, parallelism=parallelism)
    assert export_report(parallel, "json") == serial


@pytest.mark.asyncio
async def test_explore_async_refute(small_params):
    theorem = Theorem("increasing", "interval", Relation.STRICTLY_INCREASING, 1, small_params.horizon)
    model = build_model(small_params, theorem)
    report = await explore_async(model.program, mode=Mode.REFUTE, parallelism=2)
    assert report.counterexample_label == "0.0.0.0.0.0.0.0.0"


# Export tests
def test_json_report_layout(small_model):
    payload = json.loads(export_report(explore(small_model.program), "json"))
    assert payload["schema"] == 1
    assert payload["verdict"] == "NECESSARY"
    assert payload["completed"] == 64
    assert payload["valid"] is True
    assert "mapping" not in payload
    assert "diagnostics" not in payload
    assert len(payload["envelope"]["interval"]) == small_model.params.horizon
    first = payload["envelope"]["interval"][0]
    assert first == {"sti": 1, "min": "12", "max": "12", "argmin": "0.0.0.0.0.0.0.0.0",
                     "argmax": "0.0.0.0.0.0.0.0.0"}


def test_json_report_is_deterministic(small_model):
    first = export_report(explore(small_model.program), "json")
    second = export_report(explore(small_model.program), "json")
    assert first == second
    assert first.endswith(b"\n")


def test_diagnostics_on_request(swap_program):
    report = explore(swap_program, mode=Mode.SURVEY, instrument=True)
    payload = json.loads(export_report(report, "json", include_diagnostics=True))
    assert "wall_time" in payload["diagnostics"]
    assert payload["diagnostics"]["scans"]["choose@2"] == "4"


def test_csv_report(swap_program):
    rows = list(csv.reader(io.StringIO(export_report(explore(swap_program, mode="survey"), "csv").decode())))
    assert rows[0] == ["sti", "observable", "min", "max", "argmin", "argmax"]
    assert len(rows) == 1 + 3 * 2
    assert rows[1][:2] == ["1", "spreadScore"]
    assert rows[2] == ["1", "total", "3", "3", "0.0.0.0", "0.0.0.0"]


def test_unknown_format(swap_program):
    with pytest.raises(ValueError):
        export_report(explore(swap_program, mode="survey"), "xml")


# Acceptance tests
@pytest.mark.slow
def test_default_market_is_necessary(default_split):
    report = explore(default_split.program, provenance=default_split.provenance)
    assert report.verdict is Verdict.NECESSARY
    assert report.completed == 32768
    assert report.pruned == 0
    assert report.ratios["interval"].max < 1


@pytest.mark.slow
@pytest.mark.parametrize("parallelism", [2, 8])
def test_default_market_parallel(default_split, parallelism):
    serial = export_report(explore(default_split.program, provenance=default_split.provenance), "json")
    parallel = explore_parallel(default_split.program, provenance=default_split.provenance, parallelism=parallelism)
    assert export_report(parallel, "json") == serial


@pytest.mark.slow
def test_default_market_generic_agrees(default_model, default_split):
    generic = export_report(explore(default_model.program), "json")
    split = export_report(explore(default_split.program, provenance=default_split.provenance), "json")
    assert generic == split


def test_theorem_objects_are_accepted(small_model, small_params):
    theorem = theorem_decreasing_interval(1, 3, small_params.horizon)
    report = explore(small_model.program, theorem=theorem)
    assert report.verdict is Verdict.NECESSARY
