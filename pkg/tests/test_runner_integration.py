"""Primary package against the real execution service.

Everything here goes through the line-delimited JSON stdio protocol; the
service's internals are never imported. Skipped when the service package
is not installed alongside.
"""

from __future__ import annotations

import importlib.util
import sys

import pytest

from conftest import scripted_backend
from roundtable.agents import TestCase as Case
from roundtable.errors import ToolRunnerError
from roundtable.memory import EpisodicCorpus
from roundtable.orchestrator import Problem, SolveConfig, solve
from roundtable.toolproc import ProcessRunner

pytestmark = pytest.mark.skipif(
    importlib.util.find_spec("runbox") is None,
    reason="execution service package not installed",
)

SERVICE_ARGV = [sys.executable, "-m", "runbox"]


@pytest.fixture
def runner():
    with ProcessRunner(SERVICE_ARGV) as proc:
        yield proc


class TestProcessRunnerAgainstService:
    def test_execute_echo(self, runner):
        outcome = runner.execute("print(input())", stdin="42\n")
        assert outcome.status == "ok"
        assert outcome.stdout == "42\n"
        assert outcome.stderr == ""

    def test_execute_timeout(self, runner):
        outcome = runner.execute("while True: pass", time_limit_ms=300)
        assert outcome.status == "timeout"
        assert outcome.wall_ms >= 300

    def test_execute_crash(self, runner):
        outcome = runner.execute("print(1 / 0)")
        assert outcome.status == "nonzero_exit"
        assert "ZeroDivisionError" in outcome.stderr

    def test_run_tests_verdicts_and_score(self, runner):
        outcomes, score = runner.run_tests(
            "print(int(input()) * 2)",
            [
                {"input": "3\n", "expected_output": "6"},
                {"input": "4\n", "expected_output": "9"},
            ],
        )
        assert [o.verdict for o in outcomes] == ["pass", "wrong_answer"]
        assert score == 1

    def test_service_error_frame_surfaces_as_tool_error(self, runner):
        with pytest.raises(ToolRunnerError, match="runner error"):
            runner.execute("")

    def test_requests_share_one_healthy_process(self, runner):
        for n in range(3):
            outcome = runner.execute(f"print({n})")
            assert outcome.stdout == f"{n}\n"


PLAN_TEXT = """Draft of roles:
1. Parser Specialist - reads the input format closely
2. Algorithm Designer - picks the approach
3. Edge Case Hunter - probes boundaries
4. Complexity Analyst - watches the limits
5. Refactorer - tidies the final program

Selected roles:
1. Parser Specialist - reads the input format closely
2. Algorithm Designer - picks the approach
3. Edge Case Hunter - probes boundaries
"""

ROLES = ("Parser Specialist", "Algorithm Designer", "Edge Case Hunter")


class TestCodeSolveThroughService:
    """A full deliberation where judging runs programs in the sandbox."""

    def script(self):
        program = "```python\nprint(input())\n```"
        entries = {("c1", "planner", "", 0, 0): PLAN_TEXT}
        for role in ROLES:
            entries[("c1", "agent", role, 0, 0)] = f"Read one line, echo it.\n\n{program}"
        entries[("c1", "verifier", "", 0, 0)] = program
        return entries

    def problem(self):
        return Problem(
            id="c1",
            kind="code",
            statement="Echo the input line.",
            sample_tests=(Case(input="hi", expected_output="hi", origin="sample"),),
            preloaded_tests=(
                Case(input="yo", expected_output="yo", origin="synthesized"),
            ),
        )

    def test_sandbox_judged_solve_converges(self):
        with ProcessRunner(SERVICE_ARGV) as runner:
            result, _ = solve(
                self.problem(),
                SolveConfig(judge_execution="sandbox", mode="minus"),
                EpisodicCorpus(),
                scripted_backend(self.script()),
                tool_runner=runner,
            )
        assert result.converged is True
        assert result.iterations_used == 1
        assert result.answer.answer == "print(input())"
        # planner + three agents + extraction; judging ran in the sandbox
        assert result.ledger["totals"]["calls"] == 5
        # code scores are raw pass counts; both cases passed for every agent
        scores = [t.feedback.score for t in result.iteration_records[0].trajectories]
        assert [str(s) for s in scores] == ["2", "2", "2"]

    def test_wrong_program_scores_its_passing_cases(self):
        entries = self.script()
        bad = "```python\ninput()\nprint('hi')\n```"
        for role in ROLES:
            # a max_iterations=1 run that never converges uses rounds 0 and 1
            for iteration in (0, 1):
                entries[("c1", "agent", role, iteration, 0)] = f"Hardcode it.\n\n{bad}"
        entries[("c1", "verifier", "", 0, 0)] = bad
        with ProcessRunner(SERVICE_ARGV) as runner:
            result, _ = solve(
                self.problem(),
                SolveConfig(judge_execution="sandbox", mode="minus",
                            max_iterations=1, repair_rounds=0),
                EpisodicCorpus(),
                scripted_backend(entries),
                tool_runner=runner,
            )
        # passes the "hi" case, fails the "yo" case, on both rounds
        assert result.converged is False
        assert result.iterations_used == 2
        scores = [t.feedback.score for t in result.iteration_records[0].trajectories]
        assert [str(s) for s in scores] == ["1", "1", "1"]
        verdict_lines = result.iteration_records[0].trajectories[0].feedback.explanation
        assert "case 0: pass" in verdict_lines
        assert "case 1: wrong_answer" in verdict_lines
