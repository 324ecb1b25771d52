"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

from fractions import Fraction

import pytest

from roundtable.backend import ScriptedBackend, ScriptedTranscript
from roundtable.memory import Feedback, Trajectory
from roundtable.toolproc import CaseOutcome, ExecOutcome


def make_feedback(score, kind="math", explanation="judged"):
    return Feedback(explanation=explanation, score=Fraction(score), kind=kind)


def make_trajectory(score, kind="math", iteration=0, agent_index=0, role="Solver",
                    thought="thinking", response="final words"):
    return Trajectory(
        role_name=role,
        thought=thought,
        response=response,
        feedback=make_feedback(score, kind=kind),
        iteration=iteration,
        agent_index=agent_index,
    )


class StubRunner:
    """In-process stand-in for the execution service."""

    def __init__(self, on_execute=None, on_run_tests=None):
        self.execute_calls = []
        self.test_calls = []
        self._on_execute = on_execute or (
            lambda source, stdin: ExecOutcome(status="ok", stdout="", stderr="", wall_ms=1)
        )
        self._on_run_tests = on_run_tests or (lambda source, cases: ([], 0))

    def execute(self, source, stdin="", time_limit_ms=10_000, memory_limit_mb=512):
        self.execute_calls.append((source, stdin))
        return self._on_execute(source, stdin)

    def run_tests(self, source, cases, time_limit_ms=10_000, memory_limit_mb=512):
        self.test_calls.append((source, list(cases)))
        return self._on_run_tests(source, cases)


def verdicts_to_outcomes(verdicts, observed=""):
    return [
        CaseOutcome(case_index=i, verdict=v, observed=observed)
        for i, v in enumerate(verdicts)
    ]


def scripted_backend(entries, wildcards=None):
    """entries: {(problem_id, tag, role, iteration, turn): response}"""
    script = ScriptedTranscript()
    for (pid, tag, role, iteration, turn), response in entries.items():
        script.add(pid, tag, role, iteration, turn, response)
    for digest, response in (wildcards or {}).items():
        script.add_wildcard(digest, response)
    return ScriptedBackend(script)


@pytest.fixture
def stub_runner():
    return StubRunner()
