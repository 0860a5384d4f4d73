import json
import random
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from healthlm import evalkit
from healthlm.errors import EmptySeries, LengthMismatch, MixedDatasets, NoRunsFound, ZeroReference
from healthlm.evalkit import (AnswerKind, Direction, ParsedAnswer, RunSummary, accuracy, accuracy_counts,
                              build_report, mae, parse_answer, pct_improvement)

TABLES = Path(__file__).parent / "data" / "published_tables.json"


def test_parse_number_with_trailing_period():
    p = parse_answer("Answer: 214.", "calories")
    assert p.kind is AnswerKind.NUMBER and p.number == 214.0


def test_parse_signed_and_decimal():
    assert parse_answer("about -3.25 bpm", "avg_hr").number == -3.25
    assert parse_answer(".5", "avg_hr").number == 0.5


def test_parse_class_label():
    p = parse_answer("Running", "activity")
    assert p.kind is AnswerKind.CLASS_LABEL and p.label == "Running"
    assert parse_answer("i think WALKING", "activity").label == "Walking"


def test_parse_failures():
    assert parse_answer("no digits here", "ibi_to_hr").failed
    assert parse_answer("Walking or Running", "activity").failed
    assert parse_answer("", "ibi_to_afib").failed


def test_not_stressed_is_not_also_stressed():
    assert parse_answer("Not Stressed", "stress_ema").label == "Not Stressed"
    assert parse_answer("stressed", "stress_ema").label == "Stressed"


@given(st.text(max_size=60), st.sampled_from(["avg_hr", "activity", "stress_ema", "phq", "bogus"]))
def test_parse_is_total(text, task):
    assert isinstance(parse_answer(text, task), ParsedAnswer)


def test_mae():
    assert mae([1, 2, 3], [1, 2, 3]) == 0.0
    assert mae([1, 2], [2, 4]) == 1.5
    with pytest.raises(LengthMismatch):
        mae([1], [1, 2])
    with pytest.raises(EmptySeries):
        mae([], [])


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30), st.randoms())
def test_mae_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = mae(*zip(*pairs))
    assert a == pytest.approx(mae(*zip(*shuffled)), rel=1e-12, abs=1e-12)


def test_accuracy_scoring_rule():
    assert accuracy(["a"] * 4, ["a"] * 4) == (100.0, 0.0)
    assert accuracy(["a"] * 50 + ["b"] * 50, ["a"] * 100) == (50.0, 0.0)
    preds = ["a"] * 80 + ["b"] * 10 + [None] * 10
    assert accuracy(preds, ["a"] * 100) == (80.0, 10.0)
    with pytest.raises(LengthMismatch):
        accuracy(["a"], [])


@given(st.lists(st.sampled_from(["a", "b", None]), min_size=1, max_size=97))
def test_percentages_sum_to_100_exactly(preds):
    counts = accuracy_counts(preds, ["a"] * len(preds))
    assert sum(counts.percentages()) == 100


@pytest.mark.parametrize("ref, cand, direction, expected, tol", [
    (19.8, 5.01, Direction.LOWER_BETTER, 74.7, 0.1),
    (86.0, 92.0, Direction.HIGHER_BETTER, 7.0, 0.05),
    (40.0, 40.0, Direction.LOWER_BETTER, 0.0, 0.0),
    (40.0, 40.0, Direction.HIGHER_BETTER, 0.0, 0.0),
])
def test_pct_improvement(ref, cand, direction, expected, tol):
    assert pct_improvement(ref, cand, direction) == pytest.approx(expected, abs=tol)


def test_zero_reference():
    with pytest.raises(ZeroReference):
        pct_improvement(0.0, 3.0)


@given(st.floats(1e-3, 1e4), st.floats(-1e4, 1e4))
def test_improvement_antisymmetric_in_direction(ref, cand):
    assert pct_improvement(ref, cand, Direction.LOWER_BETTER) == -pct_improvement(ref, cand, Direction.HIGHER_BETTER)


def _summary(**kw):
    base = dict(task="ibi_to_afib", regime="prompt-tuning", variant="context", shots=25, seed=0,
                metric_name="accuracy", metric_value=80.0, n=100, dataset_hash="d")
    return RunSummary(**{**base, **kw})


def test_single_run_has_empty_improvement():
    rep = build_report([_summary()])
    assert [r["improvement"] for r in rep.tables["tuned_vs_supervised"]] == [None]
    assert len(rep.rows) == 1


def test_identical_runs_give_zero_improvement():
    runs = [_summary(regime=r, shots=s) for r, s in (("supervised", 25), ("prompt-tuning", 25),
                                                     ("zero-shot", 0), ("prompt-tuning", 3),
                                                     ("prompt-engineering", 3))]
    tables = build_report(runs).tables
    for name in ("tuned_vs_supervised", "tuned_vs_zero_shot", "tuned_vs_icl"):
        assert [r["improvement"] for r in tables[name]] == [0.0]


def test_seed_median():
    runs = [_summary(seed=s, metric_value=v) for s, v in ((0, 70.0), (1, 90.0), (2, 75.0))]
    row = build_report(runs).rows[0]
    assert row["metric_value"] == 75.0 and row["seeds"] == [0, 1, 2]


def test_report_errors():
    with pytest.raises(NoRunsFound):
        build_report([])
    with pytest.raises(MixedDatasets):
        build_report([_summary(), _summary(seed=1, dataset_hash="other")])


def test_report_is_deterministic_under_input_order():
    runs = evalkit.load_fixture(TABLES)
    shuffled = list(runs)
    random.Random(3).shuffle(shuffled)
    assert build_report(runs).to_text() == build_report(shuffled).to_text()
    assert build_report(runs).to_json() == build_report(shuffled).to_json()


def test_fixture_reproduces_tuned_vs_supervised_column():
    printed = json.loads(TABLES.read_text())["printed_improvement"]["tuned_vs_supervised"]
    rows = build_report(evalkit.load_fixture(TABLES)).tables["tuned_vs_supervised"]
    assert len(rows) == 9
    for row in rows:
        tol = 1.1 if row["task"] == "ibi_to_afib" else 0.15
        assert row["improvement"] == pytest.approx(printed[row["task"]], abs=tol), row["task"]


def test_report_files(tmp_path):
    txt, js = build_report([_summary()]).write(tmp_path)
    assert "ibi_to_afib" in txt.read_text()
    assert json.loads(js.read_text())["schema_version"] == evalkit.REPORT_SCHEMA_VERSION
