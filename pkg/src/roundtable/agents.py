"""Role planning, agent execution, judging, verification, and repair.

All operations are stateless functions over a RecordingSession. Parsing of
model output is defensive: every parse has a bounded retry and a defined
degraded result, so a single bad completion can never wedge a run.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from fractions import Fraction

from .backend import ChatRequest, Message, RecordingSession
from .errors import (
    ContextInvariantViolation,
    NoAnswerFound,
    NoTests,
    UnparseableScore,
)
from .memory import Exemplar, Feedback, Trajectory, score_text
from .prompts import SECTION_RULE, render_prompt, task_word

log = logging.getLogger(__name__)

FALLBACK_ROSTERS = {
    "math": ("Mathematical Modeler", "Numerical Analyst", "Mathematician"),
    "code": ("Algorithm Designer", "Implementation Specialist", "Programmer"),
}

DEFAULT_TEST_COUNT = 10


@dataclass(frozen=True)
class AgentRole:
    name: str
    charter: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValueError("role name must be non-empty")


@dataclass(frozen=True)
class TestCase:
    input: str
    expected_output: str
    origin: str  # sample | synthesized

    def __post_init__(self):
        if self.origin not in ("sample", "synthesized"):
            raise ValueError(f"unknown test origin {self.origin!r}")


@dataclass(frozen=True)
class TestSuite:
    cases: tuple[TestCase, ...]

    @property
    def n_test(self) -> int:
        return len(self.cases)

    def as_payload(self) -> list[dict]:
        return [{"input": c.input, "expected_output": c.expected_output} for c in self.cases]


@dataclass(frozen=True)
class AgentContext:
    """Everything one agent sees at one iteration.

    Iteration 0 may carry retrieved exemplars and nothing else; later
    iterations carry the agent's own prior attempt plus the shared-store
    snapshot and never the exemplars.
    """

    problem_id: str
    problem_text: str
    role: AgentRole
    iteration: int
    exemplars: tuple[Exemplar, ...] = ()
    prior: tuple[str, str] | None = None  # (thought, response)
    shared_snapshot: tuple[Trajectory, ...] = ()


@dataclass(frozen=True)
class VerifiedAnswer:
    final_reasoning: str
    final_response: str
    answer: str
    format: str  # boxed | code


def build_context(problem_id: str, problem_text: str, role: AgentRole, iteration: int,
                  exemplars: tuple[Exemplar, ...] = (),
                  prior: tuple[str, str] | None = None,
                  shared_snapshot: tuple[Trajectory, ...] = ()) -> AgentContext:
    if iteration == 0:
        if prior is not None:
            raise ContextInvariantViolation("iteration 0 cannot carry a prior response")
        if shared_snapshot:
            raise ContextInvariantViolation("iteration 0 cannot carry a store snapshot")
    else:
        if exemplars:
            raise ContextInvariantViolation("exemplars are only injected at iteration 0")
        if not shared_snapshot:
            raise ContextInvariantViolation("iterations past 0 need a non-empty store snapshot")
    return AgentContext(
        problem_id=problem_id,
        problem_text=problem_text,
        role=role,
        iteration=iteration,
        exemplars=tuple(exemplars),
        prior=prior,
        shared_snapshot=tuple(shared_snapshot),
    )


# --- text extraction helpers -------------------------------------------------

_FENCE_RE = re.compile(r"```[ \t]*[A-Za-z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)


def extract_boxed(text: str) -> list[str]:
    """Contents of every boxed marker, handling nested braces."""
    out = []
    i = 0
    marker = "\\boxed{"
    while True:
        j = text.find(marker, i)
        if j < 0:
            break
        depth = 1
        k = j + len(marker)
        start = k
        while k < len(text) and depth:
            if text[k] == "{":
                depth += 1
            elif text[k] == "}":
                depth -= 1
            k += 1
        if depth:
            break  # unterminated; ignore the tail
        out.append(text[start : k - 1])
        i = k
    return out


def extract_code_blocks(text: str) -> list[str]:
    """Bodies of every fenced code block, trailing newline trimmed."""
    bodies = []
    for m in _FENCE_RE.finditer(text):
        body = m.group(1)
        if body.endswith("\n"):
            body = body[:-1]
        bodies.append(body)
    return bodies


def extract_python_blocks(text: str) -> list[str]:
    pattern = re.compile(r"```[ \t]*python[ \t]*\n(.*?)```", re.DOTALL | re.IGNORECASE)
    out = []
    for m in pattern.finditer(text):
        body = m.group(1)
        if body.endswith("\n"):
            body = body[:-1]
        out.append(body)
    return out


def split_thought_response(text: str, kind: str) -> tuple[str, str]:
    """Split a completion into its reasoning segment and final-answer segment.

    Math: the final-answer segment starts at the last paragraph holding a
    boxed marker. Code: it starts at the opening fence of the last code
    block. Without either marker the whole text is the response.
    """
    if not text:
        return "", "(empty completion)"
    if kind == "math":
        paragraphs = text.split("\n\n")
        last = None
        for idx, para in enumerate(paragraphs):
            if "\\boxed{" in para:
                last = idx
        if last is None:
            return "", text
        return "\n\n".join(paragraphs[:last]).rstrip(), "\n\n".join(paragraphs[last:])
    matches = list(_FENCE_RE.finditer(text))
    if not matches:
        return "", text
    start = matches[-1].start()
    return text[:start].rstrip(), text[start:]


# --- rendering helpers ---------------------------------------------------------

def render_exemplars(exemplars: tuple[Exemplar, ...]) -> str:
    parts = []
    for n, ex in enumerate(exemplars, start=1):
        block = [f"Problem {n}:", ex.problem_text]
        if ex.reasoning:
            block += ["Reasoning:", ex.reasoning]
        block += ["Solution:", ex.solution]
        parts.append("\n".join(block))
    return "\n\n".join(parts)


def render_store(snapshot: tuple[Trajectory, ...]) -> str:
    parts = []
    for t in snapshot:
        parts.append(
            "\n".join(
                [
                    f"Role: {t.role_name}",
                    f"Score: {score_text(t.feedback.score)}",
                    f"Execution feedback: {t.feedback.explanation}",
                    "Thought:",
                    t.thought or "(none)",
                    "Response:",
                    t.response,
                ]
            )
        )
    return "\n\n".join(parts)


def render_prior(prior: tuple[str, str]) -> str:
    thought, response = prior
    return f"Thought:\n{thought or '(none)'}\n\nResponse:\n{response}"


def render_agent_prompt(context: AgentContext, kind: str) -> str:
    word = task_word(kind)
    sections = [
        render_prompt(
            "agent_header",
            {"role": context.role.name, "task": word, "problem": context.problem_text},
        )
    ]
    if context.exemplars:
        sections.append(
            render_prompt("agent_retrieval", {"exemplars": render_exemplars(context.exemplars)})
        )
    if context.prior is not None:
        sections.append(render_prompt("agent_prior", {"prior": render_prior(context.prior)}))
    if context.shared_snapshot:
        sections.append(
            render_prompt("agent_store", {"store": render_store(context.shared_snapshot)})
        )
    if kind == "math":
        tail_id = "agent_task_math" if context.iteration == 0 else "agent_task_math_refine"
    else:
        tail_id = "agent_task_code" if context.iteration == 0 else "agent_task_code_refine"
    sections.append(render_prompt(tail_id, {}))
    return ("\n" + SECTION_RULE + "\n").join(sections)


def render_candidate(role_name: str, thought: str, response: str) -> str:
    return f"Role: {role_name}\nThought:\n{thought or '(none)'}\n\nResponse:\n{response}"


def render_tests(suite: TestSuite) -> str:
    parts = []
    for n, case in enumerate(suite.cases, start=1):
        parts.append(
            f"Case {n}:\nInput:\n{case.input}\nExpected Output:\n{case.expected_output}"
        )
    return "\n\n".join(parts)


# --- planner --------------------------------------------------------------------

_ITEM_RE = re.compile(r"^\s*(?:\d+[.)]\s+|[-*]\s+)(.+?)\s*$")
_SELECT_RE = re.compile(r"select", re.IGNORECASE)


def _clean_role_name(raw: str) -> tuple[str, str]:
    text = raw.strip().strip("*").strip()
    for sep in (" — ", " – ", " - ", ": "):
        if sep in text:
            name, charter = text.split(sep, 1)
            return name.strip().strip("*").strip(), charter.strip()
    return text, ""


def parse_team(text: str, m: int) -> list[AgentRole] | None:
    """Pull m distinct roles out of the completion's selection section.

    Returns None when the completion under-generated its draft or the
    selection cannot be parsed into m distinct names.
    """
    lines = text.splitlines()
    heading = None
    for idx, line in enumerate(lines):
        if _SELECT_RE.search(line) and len(line) <= 120:
            heading = idx
    if heading is None:
        return None

    draft_names = []
    for line in lines[:heading]:
        match = _ITEM_RE.match(line)
        if match:
            name, _ = _clean_role_name(match.group(1))
            if name and name.casefold() not in [d.casefold() for d in draft_names]:
                draft_names.append(name)
    if draft_names and len(draft_names) <= m:
        return None  # the draft must over-generate

    roles: list[AgentRole] = []
    seen = set()
    for line in lines[heading + 1 :]:
        match = _ITEM_RE.match(line)
        if not match:
            continue
        name, charter = _clean_role_name(match.group(1))
        if not name or name.casefold() in seen:
            continue
        seen.add(name.casefold())
        roles.append(AgentRole(name=name, charter=charter))
        if len(roles) == m:
            return roles
    return None


def fallback_roster(kind: str, m: int) -> list[AgentRole]:
    base = FALLBACK_ROSTERS[kind]
    roles = []
    for i in range(m):
        name = base[i % len(base)]
        suffix = i // len(base) + 1
        if suffix > 1:
            name = f"{name} {suffix}"
        roles.append(AgentRole(name=name, charter=""))
    return roles


def plan_team(session: RecordingSession, problem_id: str, problem_text: str, kind: str,
              m: int, temperature: float, seed: int | None = None) -> list[AgentRole]:
    """Ask for >m drafted roles, parse the m selected ones, fall back if needed."""
    prompt = render_prompt(
        "planner", {"task": task_word(kind), "problem": problem_text, "m": m}
    )
    for turn in range(2):
        completion = session.complete(
            ChatRequest(
                messages=(Message("user", prompt),),
                temperature=temperature,
                tag="planner",
                problem_id=problem_id,
                iteration=0,
                turn=turn,
                seed=seed,
            )
        )
        roles = parse_team(completion.text, m)
        if roles is not None:
            return roles
    log.warning("planner output unusable twice; using the %s fallback roster", kind)
    return fallback_roster(kind, m)


# --- dynamic agent -----------------------------------------------------------------

def run_agent(session: RecordingSession, context: AgentContext, kind: str,
              temperature: float, tool_runner=None, seed: int | None = None) -> tuple[str, str]:
    """One agent turn: completion, optional single tool round, split (thought, response)."""
    prompt = render_agent_prompt(context, kind)
    base_messages = (Message("user", prompt),)
    completion = session.complete(
        ChatRequest(
            messages=base_messages,
            temperature=temperature,
            tag="agent",
            problem_id=context.problem_id,
            role=context.role.name,
            iteration=context.iteration,
            turn=0,
            seed=seed,
        )
    )
    text = completion.text

    if kind == "math" and tool_runner is not None:
        blocks = extract_python_blocks(text)
        if blocks:
            outcome = tool_runner.execute(source=blocks[-1], stdin="")
            if outcome.status in ("timeout", "spawn_error"):
                session.note_tool_event(
                    context.problem_id,
                    context.role.name,
                    context.iteration,
                    turn=0,
                    detail=f"tool {outcome.status}; continuing without tool output",
                )
            else:
                session.note_tool_event(
                    context.problem_id,
                    context.role.name,
                    context.iteration,
                    turn=0,
                    detail=f"tool {outcome.status} in {outcome.wall_ms} ms",
                )
                tool_msg = render_prompt(
                    "tool_result", {"stdout": outcome.stdout, "stderr": outcome.stderr}
                )
                followup = session.complete(
                    ChatRequest(
                        messages=base_messages
                        + (
                            Message("assistant", text),
                            Message("tool", tool_msg),
                            Message("user", render_prompt("tool_followup", {})),
                        ),
                        temperature=temperature,
                        tag="agent",
                        problem_id=context.problem_id,
                        role=context.role.name,
                        iteration=context.iteration,
                        turn=1,
                        seed=seed,
                    )
                )
                text = followup.text

    return split_thought_response(text, kind)


# --- judge --------------------------------------------------------------------------

_SCORE_RE = re.compile(
    r"(?i)\bscore\b\**\s*(?:is|:|=|of)?\s*\**\s*([0-9]+(?:\.[0-9]*)?(?:\s*/\s*[0-9]+)?)"
)


def parse_judge_score(text: str, kind: str, n_test: int | None = None) -> Fraction:
    """Last 'Score: X' style value, validated against the kind's range."""
    matches = _SCORE_RE.findall(text)
    if not matches:
        raise UnparseableScore("no score statement found")
    raw = matches[-1].replace(" ", "").rstrip(".")
    try:
        value = Fraction(raw)
    except (ValueError, ZeroDivisionError) as exc:
        raise UnparseableScore(f"unreadable score {raw!r}") from exc
    if kind == "math":
        if not 0 <= value <= 1:
            raise UnparseableScore(f"math score {raw!r} outside [0, 1]")
    else:
        if value.denominator != 1 or value < 0 or (n_test is not None and value > n_test):
            raise UnparseableScore(f"code score {raw!r} outside [0, {n_test}]")
    return value


def judge(session: RecordingSession, problem_id: str, problem_text: str, kind: str,
          role_name: str, thought: str, response: str, iteration: int, temperature: float,
          execution: str = "simulated", suite: TestSuite | None = None, tool_runner=None,
          seed: int | None = None) -> Feedback:
    """Score one trajectory, via prompt or via the sandbox for code."""
    if kind == "code" and execution == "sandbox":
        if tool_runner is None:
            raise ValueError("sandbox judging needs a tool runner")
        if suite is None or suite.n_test == 0:
            raise NoTests("sandbox judging needs a non-empty suite")
        program_blocks = extract_code_blocks(response)
        program = program_blocks[-1] if program_blocks else response
        outcomes, score = tool_runner.run_tests(program, suite.as_payload())
        lines = [f"case {o.case_index}: {o.verdict}" for o in outcomes]
        lines.append(f"Score: {score}.")
        return Feedback(explanation="\n".join(lines), score=Fraction(score), kind=kind)

    candidate = render_candidate(role_name, thought, response)
    if kind == "code":
        if suite is None or suite.n_test == 0:
            raise NoTests("judging code needs a test suite")
        prompt = render_prompt(
            "judge_code",
            {
                "task": task_word(kind),
                "problem": problem_text,
                "candidate": candidate,
                "tests": render_tests(suite),
            },
        )
    else:
        prompt = render_prompt(
            "judge_math",
            {"task": task_word(kind), "problem": problem_text, "candidate": candidate},
        )

    n_test = suite.n_test if suite is not None else None
    last_text = ""
    for turn in range(2):
        completion = session.complete(
            ChatRequest(
                messages=(Message("user", prompt),),
                temperature=temperature,
                tag="judge",
                problem_id=problem_id,
                role=role_name,
                iteration=iteration,
                turn=turn,
                seed=seed,
            )
        )
        last_text = completion.text
        try:
            value = parse_judge_score(last_text, kind, n_test)
        except UnparseableScore:
            continue
        return Feedback(explanation=last_text, score=value, kind=kind)
    log.warning("judge output unparseable twice for %s/%s; scoring 0", problem_id, role_name)
    return Feedback(explanation="judge parse failure", score=Fraction(0), kind=kind)


# --- self-retrieval ----------------------------------------------------------------------

_PAIR_SPLIT_RE = re.compile(r"(?m)^\s*\d+[.)]\s*(?=Problem:)")


def parse_recalled_pairs(text: str) -> list[tuple[str, str | None, str]]:
    """Numbered 'Problem:/Solution:' pairs, with an optional Reasoning between."""
    chunks = _PAIR_SPLIT_RE.split(text)[1:]
    pairs = []
    for chunk in chunks:
        m = re.search(
            r"Problem:\s*(.*?)\n(?:Reasoning:\s*(.*?)\n)?Solution:\s*(.*?)\s*\Z",
            chunk,
            re.DOTALL,
        )
        if not m:
            continue
        problem, reasoning, solution = m.group(1).strip(), m.group(2), m.group(3).strip()
        if not problem or not solution:
            continue
        pairs.append((problem, reasoning.strip() if reasoning else None, solution))
    return pairs


def self_retrieve(session: RecordingSession, problem_id: str, problem_text: str, kind: str,
                  k: int, temperature: float, seed: int | None = None) -> list[Exemplar]:
    """Ask the model to recall k similar solved problems from its own prior.

    One reprompt when nothing parses; whatever parses (possibly nothing)
    is the degraded result.
    """
    prompt = render_prompt(
        "self_retrieval", {"task": task_word(kind), "problem": problem_text, "k": k}
    )
    pairs: list[tuple[str, str | None, str]] = []
    for turn in range(2):
        completion = session.complete(
            ChatRequest(
                messages=(Message("user", prompt),),
                temperature=temperature,
                tag="retrieval",
                problem_id=problem_id,
                iteration=0,
                turn=turn,
                seed=seed,
            )
        )
        pairs = parse_recalled_pairs(completion.text)
        if pairs:
            break
    if not pairs:
        log.warning("self-retrieval for %s parsed no pairs after a reprompt", problem_id)
    return [
        Exemplar(
            id=f"recalled-{problem_id}-{n}",
            problem_text=problem,
            solution=solution,
            reasoning=reasoning,
            origin="solved",
        )
        for n, (problem, reasoning, solution) in enumerate(pairs[:k], start=1)
    ]


# --- test synthesis --------------------------------------------------------------------

_CASE_SPLIT_RE = re.compile(r"(?m)^Case\s+\d+\s*:\s*$")


def parse_test_cases(text: str) -> list[tuple[str, str]]:
    chunks = _CASE_SPLIT_RE.split(text)[1:]
    cases = []
    for chunk in chunks:
        m = re.search(
            r"Input:\n(.*?)\nExpected Output:\n(.*?)(?:\n\s*)?\Z", chunk, re.DOTALL
        )
        if not m:
            continue
        cases.append((m.group(1).rstrip("\n"), m.group(2).rstrip("\n")))
    return cases


def synthesize_tests(session: RecordingSession, problem_id: str, problem_text: str,
                     sample_cases: tuple[TestCase, ...] = (),
                     count: int = DEFAULT_TEST_COUNT, temperature: float = 0.2,
                     seed: int | None = None) -> TestSuite:
    """One synthesis completion, parsed into cases; degrades to samples alone."""
    prompt = render_prompt("synthesize_tests", {"problem": problem_text, "count": count})
    completion = session.complete(
        ChatRequest(
            messages=(Message("user", prompt),),
            temperature=temperature,
            tag="synthesis",
            problem_id=problem_id,
            iteration=0,
            turn=0,
            seed=seed,
        )
    )
    parsed = parse_test_cases(completion.text)[:count]
    if not parsed:
        log.warning("test synthesis for %s produced no usable cases", problem_id)
    synthesized = tuple(
        TestCase(input=inp, expected_output=out, origin="synthesized") for inp, out in parsed
    )
    cases = tuple(sample_cases) + synthesized
    if not cases:
        raise NoTests(f"no test cases available for {problem_id}")
    return TestSuite(cases=cases)


# --- verifier -----------------------------------------------------------------------------

def verify_extract(session: RecordingSession, best: Trajectory, kind: str, problem_id: str,
                   temperature: float, seed: int | None = None) -> VerifiedAnswer:
    """Run the extraction pass and pull the final answer out of it.

    The extractor completion always happens; if its output lacks the
    marker, the stored response itself is the fallback source.
    """
    template_id = "verifier_math" if kind == "math" else "verifier_code"
    rendered = render_candidate(best.role_name, best.thought, best.response)
    prompt = render_prompt(template_id, {"task": task_word(kind), "response": rendered})
    completion = session.complete(
        ChatRequest(
            messages=(Message("user", prompt),),
            temperature=temperature,
            tag="verifier",
            problem_id=problem_id,
            iteration=0,
            turn=0,
            seed=seed,
        )
    )
    extract = extract_boxed if kind == "math" else extract_code_blocks
    for source in (completion.text, best.response):
        found = extract(source)
        if found:
            return VerifiedAnswer(
                final_reasoning=best.thought,
                final_response=best.response,
                answer=found[-1],
                format="boxed" if kind == "math" else "code",
            )
    raise NoAnswerFound(f"no extractable answer for {problem_id}")


# --- code repair -----------------------------------------------------------------------------

def repair_code(session: RecordingSession, tool_runner, answer: str, suite: TestSuite,
                max_rounds: int, problem_id: str, temperature: float,
                seed: int | None = None) -> str:
    """Bounded execute-and-fix loop; keeps the best-scoring program seen.

    A candidate replaces the incumbent only on a strict pass-count
    improvement, so the result never scores below the input program.
    """
    if suite.n_test == 0 or max_rounds <= 0:
        return answer
    cases = suite.as_payload()
    best_program = answer
    outcomes, best_score = tool_runner.run_tests(best_program, cases)
    if best_score == suite.n_test:
        return best_program

    for round_no in range(1, max_rounds + 1):
        failing = next((o for o in outcomes if o.verdict != "pass"), None)
        if failing is None:
            break
        case = suite.cases[failing.case_index]
        prompt = render_prompt(
            "repair",
            {
                "program": best_program,
                "case_input": case.input,
                "expected": case.expected_output,
                "observed": f"[{failing.verdict}]\n{failing.observed}",
            },
        )
        completion = session.complete(
            ChatRequest(
                messages=(Message("user", prompt),),
                temperature=temperature,
                tag="verifier",
                problem_id=problem_id,
                iteration=0,
                turn=round_no,
                seed=seed,
            )
        )
        blocks = extract_code_blocks(completion.text)
        if not blocks:
            log.warning("repair round %d for %s produced no code block", round_no, problem_id)
            continue
        candidate = blocks[-1]
        candidate_outcomes, candidate_score = tool_runner.run_tests(candidate, cases)
        if candidate_score > best_score:
            best_program, best_score, outcomes = candidate, candidate_score, candidate_outcomes
            if best_score == suite.n_test:
                break
    return best_program
