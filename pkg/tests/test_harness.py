"""Dataset loading, grading rules, and multi-trial aggregation."""

from __future__ import annotations

import math
from fractions import Fraction

import pytest

from conftest import StubRunner, verdicts_to_outcomes
from roundtable.agents import TestCase as Case
from roundtable.agents import TestSuite as Suite
from roundtable.errors import DuplicateId, MalformedRecord, TrialShapeMismatch
from roundtable.harness import (
    RunReport,
    TrialOutcome,
    aggregate,
    compute_agreement,
    format_pct,
    grade_code,
    grade_math,
    human_report,
    load_dataset,
    machine_report,
)


class TestLoadDataset:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(
            '{"id": "m1", "kind": "math", "statement": "2+2?", "gold_answer": "4"}\n'
            '{"id": "c1", "kind": "code", "statement": "echo",'
            ' "sample_tests": [{"input": "a", "expected_output": "a"}]}\n',
            encoding="utf-8",
        )
        problems = load_dataset(path)
        assert [p.id for p in problems] == ["m1", "c1"]
        assert problems[0].gold_answer == "4"
        assert problems[1].sample_tests[0].input == "a"
        assert problems[1].sample_tests[0].origin == "sample"

    def test_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(
            '\n{"id": "m1", "kind": "math", "statement": "x", "gold_answer": "1"}\n\n',
            encoding="utf-8",
        )
        assert len(load_dataset(path)) == 1

    def test_bad_json_names_the_line(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(
            '{"id": "m1", "kind": "math", "statement": "x", "gold_answer": "1"}\n'
            "{broken\n",
            encoding="utf-8",
        )
        with pytest.raises(MalformedRecord) as err:
            load_dataset(path)
        assert err.value.line_no == 2

    def test_math_without_gold_is_rejected(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text('{"id": "m1", "kind": "math", "statement": "x"}\n', encoding="utf-8")
        with pytest.raises(MalformedRecord):
            load_dataset(path)

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "data.jsonl"
        line = '{"id": "m1", "kind": "math", "statement": "x", "gold_answer": "1"}\n'
        path.write_text(line + line, encoding="utf-8")
        with pytest.raises(DuplicateId):
            load_dataset(path)

    def test_unknown_kind_rejected(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text('{"id": "z", "kind": "zen", "statement": "x"}\n', encoding="utf-8")
        with pytest.raises(MalformedRecord):
            load_dataset(path)


class TestGradeMath:
    @pytest.mark.parametrize(
        "predicted, gold, expected",
        [
            ("1200", "1200", True),
            ("1,200", "1200", True),
            ("1200.0", "1200", True),
            ("1200.", "1200", True),
            (" 1200 ", "1200", True),
            ("+1200", "1200", True),
            ("1120", "1200", False),
            ("1040", "1200", False),
            ("720", "1200", False),
            ("1/2", "0.5", True),
            ("2/4", "0.5", True),
            ("3/7", "0.4285", False),
            ("0.25", "1/4", True),
            ("-3", "-3.0", True),
            ("12,34", "1234", False),        # not a legal grouping
            ("1,2340", "12340", False),      # not a legal grouping
            ("12,340", "12340", True),
            ("YES", "yes", True),
            ("x = 4", "X  =  4", True),
            ("no solution", "none", False),
            ("sqrt(2)", "sqrt(2)", True),
        ],
    )
    def test_table(self, predicted, gold, expected):
        assert grade_math(predicted, gold) is expected

    def test_empty_answers_are_an_error(self):
        with pytest.raises(ValueError):
            grade_math("", "4")


class TestGradeCode:
    def suite(self):
        return Suite(
            cases=(
                Case(input="1", expected_output="2", origin="sample"),
                Case(input="3", expected_output="6", origin="synthesized"),
            )
        )

    def test_full_pass_required(self):
        runner = StubRunner(
            on_run_tests=lambda s, c: (verdicts_to_outcomes(["pass", "pass"]), 2)
        )
        assert grade_code("prog", self.suite(), runner) is True

    def test_partial_pass_fails(self):
        runner = StubRunner(
            on_run_tests=lambda s, c: (verdicts_to_outcomes(["pass", "wrong_answer"]), 1)
        )
        assert grade_code("prog", self.suite(), runner) is False

    def test_empty_suite_is_an_error(self):
        with pytest.raises(ValueError):
            grade_code("prog", Suite(cases=()), StubRunner())


def trial(verdicts, answers=None, kinds=None):
    return TrialOutcome(
        verdicts=verdicts,
        answers=answers or {pid: "1" if v else None for pid, v in verdicts.items()},
        kinds=kinds or {},
    )


class TestAggregate:
    def test_worked_example(self):
        trials = [
            trial({"a": True, "b": True, "c": True, "d": False}),
            trial({"a": True, "b": True, "c": True, "d": True}),
        ]
        report = aggregate(trials)
        assert report.mean == Fraction(7, 8)
        assert format_pct(report.mean) == "87.50"
        assert f"{report.sd * 100:.2f}" == "8.84"
        assert report.single_trial is False
        assert report.per_trial_accuracy == (Fraction(3, 4), Fraction(1))

    def test_sd_formula_is_population_over_sqrt_n(self):
        trials = [
            trial({"a": True, "b": False}),
            trial({"a": True, "b": True}),
            trial({"a": False, "b": False}),
        ]
        report = aggregate(trials)
        accs = [0.5, 1.0, 0.0]
        mean = sum(accs) / 3
        var = sum((a - mean) ** 2 for a in accs) / 3
        assert report.sd == pytest.approx(math.sqrt(var) / math.sqrt(3))

    def test_single_trial_is_flagged(self):
        report = aggregate([trial({"a": True, "b": False})])
        assert report.single_trial is True
        assert report.sd == 0.0
        assert report.mean == Fraction(1, 2)
        assert report.agreement is None

    def test_flip_counting(self):
        trials = [
            trial({"a": True, "b": False}),
            trial({"a": False, "b": False}),
            trial({"a": True, "b": False}),
        ]
        report = aggregate(trials)
        assert report.flips == {"a": 2, "b": 0}

    def test_mean_is_permutation_invariant(self):
        trials = [
            trial({"a": True, "b": False}),
            trial({"a": False, "b": True}),
            trial({"a": True, "b": True}),
        ]
        forward = aggregate(trials)
        backward = aggregate(list(reversed(trials)))
        assert forward.mean == backward.mean
        assert forward.sd == pytest.approx(backward.sd)

    def test_shape_mismatch_is_loud(self):
        with pytest.raises(TrialShapeMismatch):
            aggregate([trial({"a": True}), trial({"b": True})])

    def test_empty_input_is_an_error(self):
        with pytest.raises(ValueError):
            aggregate([])


class TestComputeAgreement:
    def test_math_agreement_needs_matching_answers(self):
        a = trial({"p": True, "q": True}, answers={"p": "1200", "q": "5"})
        b = trial({"p": True, "q": True}, answers={"p": "1,200", "q": "7"})
        assert compute_agreement(a, b) == Fraction(1, 2)

    def test_failed_problems_never_agree(self):
        a = trial({"p": False}, answers={"p": "4"})
        b = trial({"p": True}, answers={"p": "4"})
        assert compute_agreement(a, b) == 0

    def test_code_agreement_is_verdict_based(self):
        kinds = {"p": "code"}
        a = trial({"p": True}, answers={"p": "print(1)"}, kinds=kinds)
        b = trial({"p": True}, answers={"p": "print( 1 )"}, kinds=kinds)
        assert compute_agreement(a, b) == 1

    def test_diagonal_of_aggregate_matrix(self):
        trials = [
            trial({"a": True, "b": False}, answers={"a": "4", "b": None}),
            trial({"a": True, "b": True}, answers={"a": "4", "b": "9"}),
        ]
        report = aggregate(trials)
        assert report.agreement[0][0] == 0.5  # only its own solved half
        assert report.agreement[0][1] == 0.5
        assert report.agreement[1][1] == 1.0


class TestReports:
    def report_fixture(self):
        from roundtable.orchestrator import Problem, SolveResult

        problems = [Problem(id="m1", kind="math", statement="2+2?", gold_answer="4")]
        result = SolveResult(
            problem_id="m1",
            answer=None,
            iterations_used=1,
            converged=True,
            iteration_records=(),
            ledger={
                "by_tag": {"agent": {"calls": 3, "prompt_tokens": 5, "completion_tokens": 5}},
                "totals": {"calls": 3, "prompt_tokens": 5, "completion_tokens": 5},
                "estimated": True,
            },
        )
        trials = [trial({"m1": True}, answers={"m1": "4"})]
        report = aggregate(trials)
        obj = machine_report(
            config_dict={"m": 3},
            seed=0,
            template_hash="abc123",
            backend_desc={"kind": "scripted", "model": "none"},
            problems=problems,
            trials=trials,
            results_by_trial=[[result]],
            report=report,
            ledger_dict={
                "by_tag": {},
                "totals": {"calls": 3, "prompt_tokens": 5, "completion_tokens": 5},
                "estimated": True,
            },
        )
        return obj

    def test_machine_report_shape(self):
        obj = self.report_fixture()
        assert obj["metric"]["mean"] == "1"
        assert obj["metric"]["mean_pct"] == "100.00"
        assert obj["metric"]["single_trial"] is True
        assert obj["problems"]["m1"][0]["verdict"] is True
        assert obj["problems"]["m1"][0]["calls"] == 3
        assert obj["agreement"] is None

    def test_human_report_mentions_the_essentials(self):
        text = human_report(self.report_fixture())
        assert "100.00%" in text
        assert "(single trial)" in text
        assert "m1" in text
        assert "total calls: 3" in text
        assert "(estimated)" in text
        assert text.endswith("\n")
