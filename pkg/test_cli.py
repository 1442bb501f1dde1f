import json

import pytest

from conftest import CLASH_RULE, SWAP_TEXT
from main import EXIT_COUNTEREXAMPLE, EXIT_ERROR, EXIT_OK, curve_shape, main, scan_shape_problems

SMALL_MARKET = ["--producers", "3", "--consumers", "2", "--horizon", "4"]


@pytest.fixture
def model_file(tmp_path):
    def _write(text, name="swap.rules"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)
    return _write


# compile
def test_compile_default_market(tmp_path, capsys):
    assert main(["compile", "--output", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "D. Producers' sale: 1 → 54 (time, producer, consumer)" in out
    assert "Total: 8 → 103" in out
    assert "consumer: demandOrder, sale" in out
    summary = json.loads((tmp_path / "pc_model.compile.json").read_text())
    assert summary["schema"] == 1
    assert summary["total"] == {"generic": 8, "split": 103}
    assert summary["ruleCounts"]["productionLevel"] == {"generic": 1, "split": 18}
    assert (tmp_path / "pc_model.split.rules").read_text().startswith("horizon 7.")


def test_compile_model_file(tmp_path, model_file, capsys):
    path = model_file(SWAP_TEXT)
    assert main(["compile", "--model", path, "--output", str(tmp_path)]) == EXIT_OK
    assert "Total: 2 → 4" in capsys.readouterr().out
    assert (tmp_path / "swap.split.rules").exists()


# explore
def test_explore_small_market(tmp_path, capsys):
    code = main(["explore", *SMALL_MARKET, "--output", str(tmp_path), "--format", "both"])
    assert code == EXIT_OK
    assert capsys.readouterr().out.strip() == "NECESSARY completed=64 pruned=0"
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["verdict"] == "NECESSARY"
    assert (tmp_path / "report.csv").read_text().startswith("sti,observable,min,max,argmin,argmax")


def test_explore_generic_matches_split(tmp_path):
    split_dir, generic_dir = tmp_path / "split", tmp_path / "generic"
    assert main(["explore", *SMALL_MARKET, "--output", str(split_dir)]) == EXIT_OK
    assert main(["explore", *SMALL_MARKET, "--generic", "--output", str(generic_dir)]) == EXIT_OK
    assert (split_dir / "report.json").read_bytes() == (generic_dir / "report.json").read_bytes()


def test_refute_exits_with_counterexample(tmp_path, capsys):
    code = main(["explore", "--producers", "3", "--consumers", "1", "--horizon", "4",
                 "--gamma", "1/2", "--mode", "refute", "--output", str(tmp_path)])
    assert code == EXIT_COUNTEREXAMPLE
    assert capsys.readouterr().out.startswith("COUNTEREXAMPLE completed=")
    assert json.loads((tmp_path / "report.json").read_text())["counterexample"]["label"]


def test_survey_with_theorem_is_config_error(tmp_path, capsys):
    code = main(["explore", "--mode", "survey", "--theorem", "decreasingInterval", "--output", str(tmp_path)])
    assert code == EXIT_ERROR
    assert "survey mode takes no theorem" in capsys.readouterr().err


def test_stratification_error_exits_one(tmp_path, model_file, capsys):
    path = model_file("""
horizon 2.
sort s = {x}.
pred p(s, time).
pred q(s, time).
fact p(x, 1).
rule loop: p(X, D) and not q(X, D) implies q(X, D).
""", "loop.rules")
    code = main(["explore", "--model", path, "--mode", "survey", "--output", str(tmp_path)])
    assert code == EXIT_ERROR
    assert "error: " in capsys.readouterr().err


def test_missing_model_file(tmp_path, capsys):
    code = main(["compile", "--model", str(tmp_path / "absent.rules"), "--output", str(tmp_path)])
    assert code == EXIT_ERROR
    assert "cannot read model" in capsys.readouterr().err


# trace
def test_trace_pruned_label(tmp_path, model_file, capsys):
    path = model_file(SWAP_TEXT + CLASH_RULE)
    assert main(["trace", "0.0.1.0", "--model", path, "--output", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "label 0.0.1.0 pruned" in out
    assert "pruned by STI 2 clash-2 FALSE {}" in out
    assert "clash-2 <- clash at STI 2" in out


def test_trace_generic_lists_facts(tmp_path, model_file, capsys):
    path = model_file(SWAP_TEXT)
    assert main(["trace", "1.0.1.0", "--model", path, "--generic", "--output", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "label 1.0.1.0 completed" in out
    assert "  score(a, 2, 2)" in out
    assert "  total = 3" in out


@pytest.mark.parametrize("label", ["x.y", "0.5"])
def test_trace_bad_label(tmp_path, model_file, capsys, label):
    path = model_file(SWAP_TEXT)
    assert main(["trace", label, "--model", path, "--output", str(tmp_path)]) == EXIT_ERROR
    assert "error:" in capsys.readouterr().err


# pc-model
def test_pc_model_to_stdout(capsys):
    assert main(["pc-model", "--producers", "2", "--horizon", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("horizon 3.")
    assert "rule producerChoice" in out
    assert "rule theoremCheck" in out


def test_pc_model_file_round_trip(tmp_path, capsys):
    target = tmp_path / "market.rules"
    assert main(["pc-model", *SMALL_MARKET, "--out", str(target)]) == EXIT_OK
    assert main(["explore", "--model", str(target), "--output", str(tmp_path)]) == EXIT_OK
    assert "NECESSARY completed=64" in capsys.readouterr().out


def test_pc_model_rejects_bad_gamma(capsys):
    assert main(["pc-model", "--gamma", "3/2"]) == EXIT_ERROR
    assert "gamma" in capsys.readouterr().err


# bench
def test_bench_swap(tmp_path, model_file, capsys):
    path = model_file(SWAP_TEXT)
    assert main(["bench", "--model", path, "--mode", "survey", "--output", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "generic choose: scans increasing" in out
    assert "split choose: scans flat" in out
    result = json.loads((tmp_path / "bench.json").read_text())
    assert set(result) == {"generic", "split", "speedup"}
    assert result["generic"]["scans"]["choose"] == [[1, "2"], [2, "4"]]


def test_bench_generic_only(tmp_path, model_file):
    path = model_file(SWAP_TEXT)
    assert main(["bench", "--model", path, "--mode", "survey", "--generic-only", "--output", str(tmp_path)]) == EXIT_OK
    assert set(json.loads((tmp_path / "bench.json").read_text())) == {"generic"}


def test_curve_shape():
    assert curve_shape([(0, 1), (1, 2), (2, 2)]) == "flat"
    assert curve_shape([(1, 2), (2, 4)]) == "increasing"
    assert curve_shape([(1, 2), (2, 1), (3, 3)]) == "mixed"


def test_scan_shape_problems():
    rising = [(1, 2), (2, 4), (3, 6)]
    assert scan_shape_problems({"choose": rising, "check": [(0, 5)]}, {"choose": [(1, 2), (2, 2)]}) == []
    assert scan_shape_problems({"choose": [(1, 2), (2, 2)]}) == ["generic choose scans do not rise with the STI"]
    assert scan_shape_problems({"choose": [(1, 4), (2, 3), (3, 5)]}) == ["generic choose scans do not rise with the STI"]
    assert scan_shape_problems({}, {"choose": [(1, 2), (2, 3)]}) == ["split choose scans are increasing, expected flat"]


def test_bench_small_market_has_flat_split_scans(tmp_path, capsys):
    assert main(["bench", *SMALL_MARKET, "--output", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "split producerChoice: scans flat" in out
    assert "generic price: scans increasing" in out
    result = json.loads((tmp_path / "bench.json").read_text())
    assert set(result["split"]["shapes"].values()) == {"flat"}
    # three prices plus six offers for each of the three producers, every day
    assert result["split"]["scans"]["producerChoice"] == [[1, "21"], [2, "21"], [3, "21"]]


def test_bench_fails_when_split_scans_vary(tmp_path, model_file, capsys):
    # the extra day-2 score gives the split choose rule more facts to scan on day 2
    path = model_file(SWAP_TEXT + "fact score(a, 5, 2).\n")
    assert main(["bench", "--model", path, "--mode", "survey", "--output", str(tmp_path)]) == EXIT_ERROR
    captured = capsys.readouterr()
    assert "split choose: scans increasing" in captured.out
    assert "split choose scans are increasing, expected flat" in captured.err
    assert (tmp_path / "bench.json").exists()
