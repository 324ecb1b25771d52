"""Benchmark harness: datasets, grading, multi-trial aggregation, reports."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .agents import TestCase, TestSuite
from .errors import DuplicateId, MalformedRecord, TrialShapeMismatch
from .memory import score_text
from .orchestrator import Problem, SolveResult

_GROUPED_NUMBER_RE = re.compile(r"^[+-]?\d{1,3}(?:,\d{3})+(?:\.\d*)?$")
_NUMBER_RE = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+|\d+/\d+)$")


def load_dataset(path: str | Path) -> list[Problem]:
    """Parse a JSON Lines dataset into problems, rejecting bad lines loudly."""
    problems: list[Problem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise MalformedRecord(line_no, "record is not an object")
            try:
                problem = _problem_from_record(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(line_no, str(exc)) from exc
            if problem.id in seen:
                raise DuplicateId(f"dataset repeats id {problem.id!r}")
            seen.add(problem.id)
            problems.append(problem)
    return problems


def _cases_from(obj: dict, key: str, origin: str) -> tuple[TestCase, ...]:
    raw = obj.get(key) or []
    if not isinstance(raw, list):
        raise ValueError(f"{key} must be a list")
    cases = []
    for c in raw:
        cases.append(TestCase(input=c["input"], expected_output=c["expected_output"],
                              origin=origin))
    return tuple(cases)


def _problem_from_record(obj: dict) -> Problem:
    kind = obj["kind"]
    if kind not in ("math", "code"):
        raise ValueError(f"unknown kind {kind!r}")
    if kind == "math" and not obj.get("gold_answer"):
        raise ValueError("math records need a gold_answer")
    return Problem(
        id=str(obj["id"]),
        kind=kind,
        statement=obj["statement"],
        gold_answer=obj.get("gold_answer"),
        sample_tests=_cases_from(obj, "sample_tests", "sample"),
        preloaded_tests=_cases_from(obj, "preloaded_tests", "synthesized"),
    )


# --- grading -------------------------------------------------------------------

def _normalize_answer(text: str):
    """Collapse whitespace; parse to an exact rational when numeric."""
    s = " ".join(text.split())
    if _GROUPED_NUMBER_RE.match(s):
        s = s.replace(",", "")
    if _NUMBER_RE.match(s):
        stripped = s.rstrip(".") if s.endswith(".") else s
        try:
            return ("num", Fraction(stripped))
        except (ValueError, ZeroDivisionError):
            pass
    return ("str", s.casefold())


def grade_math(predicted: str, gold: str) -> bool:
    """Exact comparison after normalization: rationals when both numeric,
    case-insensitive text otherwise."""
    if not predicted or not gold:
        raise ValueError("grade_math needs non-empty answers")
    return _normalize_answer(predicted) == _normalize_answer(gold)


def grade_code(answer: str, suite: TestSuite, tool_runner) -> bool:
    """True iff the program passes every case in the suite."""
    if suite.n_test == 0:
        raise ValueError("grade_code needs a non-empty suite")
    _, score = tool_runner.run_tests(answer, suite.as_payload())
    return score == suite.n_test


def grade_result(problem: Problem, result: SolveResult, tool_runner=None) -> bool:
    if result.failed or result.answer is None:
        return False
    if problem.kind == "math":
        if not problem.gold_answer:
            return False
        if not result.answer.answer:
            return False
        return grade_math(result.answer.answer, problem.gold_answer)
    cases = tuple(problem.sample_tests) + tuple(problem.preloaded_tests)
    if not cases or tool_runner is None:
        return False
    return grade_code(result.answer.answer, TestSuite(cases=cases), tool_runner)


# --- aggregation ------------------------------------------------------------------

@dataclass(frozen=True)
class TrialOutcome:
    """Per-problem verdicts and answers for one pass over the dataset."""

    verdicts: dict  # problem_id -> bool
    answers: dict   # problem_id -> str | None
    kinds: dict = field(default_factory=dict)  # problem_id -> math | code

    def accuracy(self) -> Fraction:
        if not self.verdicts:
            raise ValueError("empty trial")
        return Fraction(sum(1 for v in self.verdicts.values() if v), len(self.verdicts))


@dataclass(frozen=True)
class RunReport:
    mean: Fraction
    sd: float
    trial_count: int
    single_trial: bool
    per_trial_accuracy: tuple[Fraction, ...]
    flips: dict  # problem_id -> count of verdict changes between consecutive trials
    agreement: tuple[tuple[float, ...], ...] | None  # pairwise trial agreement


def aggregate(trials: list[TrialOutcome]) -> RunReport:
    """Mean accuracy across trials with its spread.

    The spread is the population standard deviation of the per-trial
    accuracies scaled by 1/sqrt(trials); a single trial reports 0 and is
    flagged.
    """
    if not trials:
        raise ValueError("aggregate needs at least one trial")
    ids = set(trials[0].verdicts)
    for t in trials[1:]:
        if set(t.verdicts) != ids:
            raise TrialShapeMismatch("trials cover different problem sets")

    accuracies = [t.accuracy() for t in trials]
    n = len(accuracies)
    mean = sum(accuracies, Fraction(0)) / n
    if n == 1:
        sd = 0.0
    else:
        var = sum(float(a - mean) ** 2 for a in accuracies) / n
        sd = math.sqrt(var) / math.sqrt(n)

    flips = {}
    for pid in sorted(ids):
        flips[pid] = sum(
            1
            for a, b in zip(trials, trials[1:])
            if a.verdicts[pid] != b.verdicts[pid]
        )

    agreement = None
    if n > 1:
        matrix = []
        for a in trials:
            row = []
            for b in trials:
                row.append(float(compute_agreement(a, b)))
            matrix.append(tuple(row))
        agreement = tuple(matrix)

    return RunReport(
        mean=mean,
        sd=sd,
        trial_count=n,
        single_trial=(n == 1),
        per_trial_accuracy=tuple(accuracies),
        flips=flips,
        agreement=agreement,
    )


def compute_agreement(a: TrialOutcome, b: TrialOutcome) -> Fraction:
    """Fraction of problems solved consistently by both trials.

    Math problems count when both verdicts are correct and the answers
    match under grading normalization; code problems count when both
    verdicts are correct (same suite, passed by both).
    """
    if set(a.verdicts) != set(b.verdicts):
        raise TrialShapeMismatch("agreement needs identical problem sets")
    if not a.verdicts:
        raise ValueError("empty trials")
    hits = 0
    for pid in a.verdicts:
        if not (a.verdicts[pid] and b.verdicts[pid]):
            continue
        kind = a.kinds.get(pid, "math")
        if kind == "code":
            hits += 1
            continue
        ans_a, ans_b = a.answers.get(pid), b.answers.get(pid)
        if ans_a and ans_b and grade_math(ans_a, ans_b):
            hits += 1
    return Fraction(hits, len(a.verdicts))


# --- reports ------------------------------------------------------------------------

def format_pct(value: Fraction | float) -> str:
    return f"{float(value) * 100:.2f}"


def machine_report(config_dict: dict, seed: int, template_hash: str, backend_desc: dict,
                   problems: list[Problem], trials: list[TrialOutcome],
                   results_by_trial: list[list[SolveResult]], report: RunReport,
                   ledger_dict: dict) -> dict:
    per_problem = {}
    for problem in problems:
        rows = []
        for trial_no, results in enumerate(results_by_trial):
            r = next(res for res in results if res.problem_id == problem.id)
            rows.append(
                {
                    "trial": trial_no,
                    "verdict": trials[trial_no].verdicts[problem.id],
                    "answer": trials[trial_no].answers[problem.id],
                    "iterations_used": r.iterations_used,
                    "converged": r.converged,
                    "failed": r.failed,
                    "failure": r.failure,
                    "calls": sum(cell["calls"] for cell in r.ledger["by_tag"].values()),
                }
            )
        per_problem[problem.id] = rows
    return {
        "config": config_dict,
        "seed": seed,
        "template_hash": template_hash,
        "backend": backend_desc,
        "trial_count": report.trial_count,
        "metric": {
            "mean": score_text(report.mean),
            "mean_pct": format_pct(report.mean),
            "sd_pct": f"{report.sd * 100:.2f}",
            "single_trial": report.single_trial,
            "per_trial_pct": [format_pct(a) for a in report.per_trial_accuracy],
        },
        "flips": report.flips,
        "agreement": [[f"{v:.4f}" for v in row] for row in report.agreement]
        if report.agreement
        else None,
        "problems": per_problem,
        "ledger": ledger_dict,
    }


def human_report(report_obj: dict) -> str:
    metric = report_obj["metric"]
    lines = [
        "run summary",
        "===========",
        f"trials:      {report_obj['trial_count']}",
        f"accuracy:    {metric['mean_pct']}% +/- {metric['sd_pct']}%"
        + ("  (single trial)" if metric["single_trial"] else ""),
        f"template:    {report_obj['template_hash']}",
        f"backend:     {report_obj['backend'].get('kind')}/{report_obj['backend'].get('model')}",
        "",
        "problem            trial  verdict  iters  converged  calls",
        "-" * 60,
    ]
    for pid, rows in report_obj["problems"].items():
        for row in rows:
            lines.append(
                f"{pid:<18} {row['trial']:>5}  {'pass' if row['verdict'] else 'FAIL':<7}"
                f"  {row['iterations_used']:>5}  {str(row['converged']):<9}  {row['calls']:>5}"
            )
    totals = report_obj["ledger"]["totals"]
    lines += [
        "-" * 60,
        f"total calls: {totals['calls']}  prompt tokens: {totals['prompt_tokens']}"
        f"  completion tokens: {totals['completion_tokens']}"
        + ("  (estimated)" if report_obj["ledger"].get("estimated") else ""),
    ]
    return "\n".join(lines) + "\n"
