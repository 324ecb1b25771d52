"""Template rendering rules: strict bindings, determinism, stable hashing."""

from __future__ import annotations

import random
import string

import pytest

from roundtable.errors import UnboundPlaceholder, UnknownTemplate, UnusedBinding
from roundtable.prompts import (
    TEMPLATES,
    placeholders,
    registry_hash,
    render_prompt,
    task_word,
)


class TestRenderPrompt:
    def test_planner_anchor_text(self):
        out = render_prompt("planner", {"task": "math", "problem": "What is 2+2?", "m": 3})
        assert out.startswith("You are a planner to solve a math problem.")
        assert "strictly greater than 3 specialized roles" in out
        assert "select the highly influential 3 roles" in out
        assert "What is 2+2?" in out

    def test_agent_header_anchor_text(self):
        out = render_prompt(
            "agent_header", {"role": "Numerical Analyst", "task": "math", "problem": "P?"}
        )
        assert out.startswith("You are a Numerical Analyst. Your task is to solve a math problem.")

    def test_judge_math_anchor_text(self):
        out = render_prompt("judge_math", {"task": "math", "problem": "P", "candidate": "C"})
        assert "You are a judge." in out
        assert "if the response is correct, it should be 1 otherwise should be 0" in out

    def test_judge_code_anchor_text(self):
        out = render_prompt(
            "judge_code", {"task": "coding", "problem": "P", "candidate": "C", "tests": "T"}
        )
        assert "based on the number of test cases passed" in out

    def test_store_section_anchor_text(self):
        out = render_prompt("agent_store", {"store": "S"})
        assert "leading responses" in out

    def test_math_tail_keeps_literal_boxed_marker(self):
        out = render_prompt("agent_task_math", {})
        assert "\\boxed{}" in out

    def test_code_tail_keeps_literal_fence(self):
        out = render_prompt("agent_task_code", {})
        assert "```python ```" in out
        assert "exactly one block of code" in out

    def test_missing_binding_rejected(self):
        with pytest.raises(UnboundPlaceholder):
            render_prompt("agent_header", {"task": "math", "problem": "P"})

    def test_unused_binding_rejected(self):
        with pytest.raises(UnusedBinding):
            render_prompt("agent_prior", {"prior": "x", "extra": "y"})

    def test_unknown_template_rejected(self):
        with pytest.raises(UnknownTemplate):
            render_prompt("nonexistent", {})

    def test_binding_values_are_not_reexpanded(self):
        out = render_prompt("agent_prior", {"prior": "contains {store} literally"})
        assert "contains {store} literally" in out

    def test_rendering_is_deterministic(self):
        bindings = {"task": "math", "problem": "P", "m": 5}
        assert render_prompt("planner", bindings) == render_prompt("planner", bindings)


class TestInjectivity:
    def test_distinct_bindings_render_distinctly(self):
        # fuzzed word-like values cannot collide because the literal text
        # between placeholders never appears inside them
        rng = random.Random(123)
        alphabet = string.ascii_lowercase + string.digits
        seen = {}
        for _ in range(300):
            bindings = {
                "task": "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 8))),
                "problem": "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12))),
                "m": rng.randint(1, 99),
            }
            key = (bindings["task"], bindings["problem"], bindings["m"])
            out = render_prompt("planner", bindings)
            if out in seen:
                assert seen[out] == key
            seen[out] = key
        assert len(seen) == len({v for v in seen.values()})


class TestRegistry:
    def test_hash_is_stable_within_process(self):
        assert registry_hash() == registry_hash()
        assert len(registry_hash()) == 16

    def test_placeholders_listing(self):
        assert placeholders("planner") == {"task", "problem", "m"}
        assert placeholders("judge_code") == {"task", "problem", "candidate", "tests"}

    def test_task_word(self):
        assert task_word("math") == "math"
        assert task_word("code") == "coding"

    def test_every_template_renders_with_exactly_its_placeholders(self):
        for tid in TEMPLATES:
            bindings = {name: "x" for name in placeholders(tid)}
            out = render_prompt(tid, bindings)
            assert isinstance(out, str) and out
