"""Versioned prompt templates and the rendering rules they obey.

Templates are plain text with ``{name}`` placeholders (lowercase names).
Rendering is strict both ways: a placeholder without a binding and a
binding without a placeholder are both errors, so a template revision
cannot silently drop content. The registry hash is recorded in run
transcripts so a replay can detect that prompts changed underneath it.
"""

from __future__ import annotations

import hashlib
import re

from .errors import UnboundPlaceholder, UnknownTemplate, UnusedBinding

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

SECTION_RULE = "-" * 100

TEMPLATES: dict[str, str] = {
    "planner": (
        "You are a planner to solve a {task} problem. Here is the problem for which you have to plan:\n"
        "{problem}\n"
        "\n"
        "First draft required strictly greater than {m} specialized roles to solve the problem "
        "collaboratively with reasoning behind your draft of each role.\n"
        "\n"
        "Then select the highly influential {m} roles by re-checking the reasoning behind your "
        "selection and assign them to each agent to solve the problem."
    ),
    "agent_header": (
        "You are a {role}. Your task is to solve a {task} problem. Here is the problem that you "
        "have to solve:\n"
        "{problem}"
    ),
    "agent_retrieval": (
        "You were also given a couple of similar problems to the problem above along with their "
        "reasoning and solutions to aid you in solving the problem at hand. Here are the similar "
        "problems you were given:\n"
        "{exemplars}"
    ),
    "agent_prior": (
        "And here was your original response:\n"
        "{prior}"
    ),
    "agent_store": (
        "Also here is the leading responses with execution results from the response store:\n"
        "{store}"
    ),
    "agent_task_math": (
        "You can integrate a Python tool to execute the calculations after replying your solution "
        "if required.\n"
        "\n"
        "Make sure to wrap your final answer in \\boxed{} block with the entire solution "
        "(in the final answer step)."
    ),
    "agent_task_math_refine": (
        "Think carefully about where you went wrong, relating with responses in the response "
        "store. Then, try to fix the solution producing a thought later reply with a solution to "
        "be executed and judged again. You can integrate a Python tool to execute the "
        "calculations after replying your solution if required.\n"
        "\n"
        "Make sure to wrap your final answer in \\boxed{} block with the entire solution "
        "(in the final answer step)."
    ),
    "agent_task_code": (
        "Make sure to wrap your code in ```python ``` block and Markdown delimiters, and include "
        "exactly one block of code with the entire solution (in the final code step)."
    ),
    "agent_task_code_refine": (
        "Think carefully about where you went wrong, relating with responses in the response "
        "store. Then, try to fix the solution producing a thought later reply with a Python "
        "solution to be executed and judged again.\n"
        "\n"
        "Make sure to wrap your code in ```python ``` block and Markdown delimiters, and include "
        "exactly one block of code with the entire solution (in the final code step)."
    ),
    "judge_math": (
        "You are a judge. Your task is to judge the candidate solution of a {task} problem. Here "
        "is the problem for which the candidate solution you have to judge:\n"
        "{problem}\n"
        "\n"
        "And here is the candidate response which to judge:\n"
        "{candidate}\n"
        "\n"
        "Please produce a score (if the response is correct, it should be 1 otherwise should be "
        "0) with reasoning behind your judgement of the candidate solution to the problem."
    ),
    "judge_code": (
        "You are a judge. Your task is to judge the candidate solution of a {task} problem. Here "
        "is the problem for which the candidate solution you have to judge:\n"
        "{problem}\n"
        "\n"
        "And here is the candidate response along with test cases against which to judge:\n"
        "{candidate}\n"
        "\n"
        "Test cases:\n"
        "{tests}\n"
        "\n"
        "Please produce a score (based on the number of test cases passed) with reasoning behind "
        "your judgement of the candidate solution to the problem."
    ),
    "verifier_math": (
        "Your are an answer extractor. Your task is to extract answer from the response to a "
        "{task} problem. Here is the response for which the answer you have to extract:\n"
        "{response}\n"
        "\n"
        "Please extract the answer from inside \\boxed{} block from the response."
    ),
    "verifier_code": (
        "Your are an answer extractor. Your task is to extract answer from the response to a "
        "{task} problem. Here is the response for which the answer you have to extract:\n"
        "{response}\n"
        "\n"
        "Please extract the answer from inside ```python ``` block from the response."
    ),
    "self_retrieval": (
        "You are solving a {task} problem. Here is the problem:\n"
        "{problem}\n"
        "\n"
        "Further, recall {k} relevant and distinct problems (different from the problem mentioned "
        "above) along with their reasoning and solutions. Present every one exactly in this "
        "format:\n"
        "\n"
        "1. Problem: <problem statement>\n"
        "Reasoning: <reasoning>\n"
        "Solution: <solution>"
    ),
    "synthesize_tests": (
        "You are a test designer for a coding problem. Here is the problem:\n"
        "{problem}\n"
        "\n"
        "Write exactly {count} test cases for a program that reads stdin and writes stdout. "
        "Present every case exactly in this format:\n"
        "\n"
        "Case 1:\n"
        "Input:\n"
        "<stdin given to the program>\n"
        "Expected Output:\n"
        "<exact stdout the program must print>"
    ),
    "repair": (
        "You are debugging a Python program. Here is the current program:\n"
        "```python\n"
        "{program}\n"
        "```\n"
        "\n"
        "It fails on this test case:\n"
        "Input:\n"
        "{case_input}\n"
        "Expected Output:\n"
        "{expected}\n"
        "Observed:\n"
        "{observed}\n"
        "\n"
        "Fix the program. Make sure to wrap your code in ```python ``` block and Markdown "
        "delimiters, and include exactly one block of code with the entire solution "
        "(in the final code step)."
    ),
    "tool_result": (
        "Tool execution output:\n"
        "stdout:\n"
        "{stdout}\n"
        "stderr:\n"
        "{stderr}"
    ),
    "tool_followup": (
        "Given the tool output above, finalize your response. Make sure to wrap your final "
        "answer in \\boxed{} block with the entire solution (in the final answer step)."
    ),
}


def task_word(kind: str) -> str:
    """Human word for a task kind as it appears inside prompts."""
    return "coding" if kind == "code" else "math"


def placeholders(template_id: str) -> set[str]:
    if template_id not in TEMPLATES:
        raise UnknownTemplate(template_id)
    return set(_PLACEHOLDER_RE.findall(TEMPLATES[template_id]))


def render_prompt(template_id: str, bindings: dict[str, object]) -> str:
    """Render a registered template with exactly the bindings it needs.

    Substitution is single pass, so binding values that happen to contain
    brace markers are inserted verbatim and never re-expanded.
    """
    if template_id not in TEMPLATES:
        raise UnknownTemplate(template_id)
    text = TEMPLATES[template_id]
    needed = set(_PLACEHOLDER_RE.findall(text))
    missing = needed - set(bindings)
    if missing:
        raise UnboundPlaceholder(
            f"template {template_id!r} is missing bindings for: {sorted(missing)}"
        )
    extra = set(bindings) - needed
    if extra:
        raise UnusedBinding(
            f"template {template_id!r} does not use bindings: {sorted(extra)}"
        )
    return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), text)


def registry_hash() -> str:
    """Stable digest of every registered template, recorded in transcripts."""
    h = hashlib.sha256()
    for tid in sorted(TEMPLATES):
        h.update(tid.encode("utf-8"))
        h.update(b"\x1f")
        h.update(TEMPLATES[tid].encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]
