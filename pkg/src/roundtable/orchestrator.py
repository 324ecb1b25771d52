"""The deliberation loop: plan a team, iterate agents against the shared
store until every kept trajectory is perfect or the budget runs out, then
verify the best response and optionally fold it back into the corpus.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

from .agents import (
    AgentRole,
    TestCase,
    TestSuite,
    VerifiedAnswer,
    build_context,
    judge,
    plan_team,
    repair_code,
    run_agent,
    self_retrieve,
    synthesize_tests,
    verify_extract,
)
from .backend import CallRecord, RecordingSession, ScriptedTranscript, TokenLedger
from .errors import (
    BackendError,
    DuplicateId,
    MissingScript,
    NoAnswerFound,
    NoTests,
    RoundtableError,
    ToolRunnerError,
)
from .memory import (
    EpisodicCorpus,
    Exemplar,
    Feedback,
    SharedMemory,
    Trajectory,
    best_response,
    converged,
    retrieve_external,
    update_episodic,
    update_shared,
)
from .prompts import registry_hash

log = logging.getLogger(__name__)

MODES = ("plus", "minus")
RETRIEVALS = ("external", "self", "none")
JUDGE_EXECUTIONS = ("simulated", "sandbox")


@dataclass(frozen=True)
class SolveConfig:
    """Knobs for one deliberation run."""

    m: int = 3
    max_iterations: int = 2
    retrieval_k: int = 5
    temperature: float = 0.2
    mode: str = "plus"
    retrieval: str = "external"
    judge_execution: str = "simulated"
    repair_rounds: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.retrieval_k < 1:
            raise ValueError("retrieval_k must be at least 1")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must lie in [0, 2]")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.retrieval not in RETRIEVALS:
            raise ValueError(f"unknown retrieval {self.retrieval!r}")
        if self.judge_execution not in JUDGE_EXECUTIONS:
            raise ValueError(f"unknown judge execution {self.judge_execution!r}")
        if self.repair_rounds < 0:
            raise ValueError("repair_rounds must be non-negative")

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "max_iterations": self.max_iterations,
            "retrieval_k": self.retrieval_k,
            "temperature": self.temperature,
            "mode": self.mode,
            "retrieval": self.retrieval,
            "judge_execution": self.judge_execution,
            "repair_rounds": self.repair_rounds,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SolveConfig":
        return cls(**{k: obj[k] for k in cls().to_dict() if k in obj})


@dataclass(frozen=True)
class Problem:
    id: str
    kind: str
    statement: str
    gold_answer: str | None = None
    sample_tests: tuple[TestCase, ...] = ()
    preloaded_tests: tuple[TestCase, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("problem id must be non-empty")
        if self.kind not in ("math", "code"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if not self.statement:
            raise ValueError("problem statement must be non-empty")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    trajectories: tuple[Trajectory, ...]
    shared_after: tuple[Trajectory, ...]


@dataclass(frozen=True)
class SolveResult:
    problem_id: str
    answer: VerifiedAnswer | None
    iterations_used: int
    converged: bool
    iteration_records: tuple[IterationRecord, ...]
    ledger: dict
    team: tuple[AgentRole, ...] = ()
    exemplars_used: tuple[Exemplar, ...] = ()
    transcript: tuple[CallRecord, ...] = ()
    failed: bool = False
    failure: str = ""


def expected_call_count(config: SolveConfig, iterations_used: int, kind: str, *,
                        synthesis: bool | None = None, tool_followups: int = 0,
                        repair_calls: int = 0) -> int:
    """Closed-form completion count for an undegraded run.

    planner + agents per iteration + judge per iteration (when judging is
    a completion) + one extraction pass, plus self-retrieval and test
    synthesis when configured, plus any recorded tool follow-ups and
    repair completions.
    """
    judge_per_iter = config.m
    if kind == "code" and config.judge_execution == "sandbox":
        judge_per_iter = 0
    if synthesis is None:
        synthesis = kind == "code"
    count = 1 + iterations_used * config.m + iterations_used * judge_per_iter + 1
    if config.retrieval == "self":
        count += 1
    if kind == "code" and synthesis:
        count += 1
    return count + tool_followups + repair_calls


def _degraded_trajectory(role: AgentRole, kind: str, iteration: int, agent_index: int,
                         reason: str) -> Trajectory:
    return Trajectory(
        role_name=role.name,
        thought="",
        response="(agent failure)",
        feedback=Feedback(
            explanation=f"agent failure: {reason}", score=Fraction(0), kind=kind
        ),
        iteration=iteration,
        agent_index=agent_index,
    )


def _run_one_agent(child: RecordingSession, problem: Problem, config: SolveConfig,
                   role: AgentRole, iteration: int, agent_index: int,
                   exemplars: tuple[Exemplar, ...], prior: tuple[str, str] | None,
                   snapshot, suite: TestSuite | None, tool_runner) -> Trajectory:
    """Agent turn plus judging, degrading to a zero-score trajectory on failure."""
    try:
        context = build_context(
            problem_id=problem.id,
            problem_text=problem.statement,
            role=role,
            iteration=iteration,
            exemplars=exemplars,
            prior=prior,
            shared_snapshot=snapshot,
        )
        thought, response = run_agent(
            child,
            context,
            problem.kind,
            temperature=config.temperature,
            tool_runner=tool_runner if problem.kind == "math" else None,
            seed=config.seed,
        )
        feedback = judge(
            child,
            problem_id=problem.id,
            problem_text=problem.statement,
            kind=problem.kind,
            role_name=role.name,
            thought=thought,
            response=response,
            iteration=iteration,
            temperature=config.temperature,
            execution=config.judge_execution,
            suite=suite,
            tool_runner=tool_runner,
            seed=config.seed,
        )
        return Trajectory(
            role_name=role.name,
            thought=thought,
            response=response,
            feedback=feedback,
            iteration=iteration,
            agent_index=agent_index,
        )
    except MissingScript:
        raise  # a scripted-run miss is a test bug, never a degradation
    except (BackendError, ToolRunnerError) as exc:
        log.warning("agent %s failed at iteration %d: %s", role.name, iteration, exc)
        return _degraded_trajectory(role, problem.kind, iteration, agent_index, str(exc))


def solve(problem: Problem, config: SolveConfig, corpus: EpisodicCorpus, backend,
          tool_runner=None, ledger: TokenLedger | None = None,
          exemplar_override: list[Exemplar] | None = None,
          agent_workers: int = 1) -> tuple[SolveResult, EpisodicCorpus]:
    """Run the full deliberation protocol for one problem.

    Returns the result and the (possibly grown) corpus. Raises
    NoAnswerFound/NoTests on terminal failures; per-agent failures only
    degrade that agent's trajectory.
    """
    ledger = ledger if ledger is not None else TokenLedger()
    session = RecordingSession(backend, ledger, registry_hash())

    team = plan_team(
        session, problem.id, problem.statement, problem.kind, config.m,
        temperature=config.temperature, seed=config.seed,
    )

    if exemplar_override is not None:
        exemplars = tuple(exemplar_override)
    elif config.retrieval == "external":
        hits = retrieve_external(corpus, problem.statement, config.retrieval_k)
        exemplars = tuple(ex for ex in hits if ex.problem_text != problem.statement)
    elif config.retrieval == "self":
        exemplars = tuple(
            self_retrieve(
                session, problem.id, problem.statement, problem.kind,
                k=config.retrieval_k, temperature=config.temperature, seed=config.seed,
            )
        )
    else:
        exemplars = ()

    suite: TestSuite | None = None
    if problem.kind == "code":
        preloaded = tuple(problem.sample_tests) + tuple(problem.preloaded_tests)
        if problem.preloaded_tests:
            suite = TestSuite(cases=preloaded)
        else:
            suite = synthesize_tests(
                session, problem.id, problem.statement,
                sample_cases=tuple(problem.sample_tests),
                temperature=config.temperature, seed=config.seed,
            )
        if suite.n_test == 0:
            raise NoTests(f"empty test suite for {problem.id}")

    shared = SharedMemory(capacity=config.m)
    records: list[IterationRecord] = []
    iterations_used = 0
    has_converged = False
    prior_by_agent: dict[int, tuple[str, str]] = {}

    for iteration in range(config.max_iterations + 1):
        snapshot = shared.entries if iteration > 0 else ()
        iteration_exemplars = exemplars if iteration == 0 else ()

        def task(agent_index: int):
            child = session.scoped()
            trajectory = _run_one_agent(
                child,
                problem,
                config,
                team[agent_index],
                iteration,
                agent_index,
                iteration_exemplars,
                prior_by_agent.get(agent_index),
                snapshot,
                suite,
                tool_runner,
            )
            return child, trajectory

        if agent_workers > 1:
            with ThreadPoolExecutor(max_workers=agent_workers) as pool:
                results = list(pool.map(task, range(config.m)))
        else:
            results = [task(j) for j in range(config.m)]

        trajectories = []
        for child, trajectory in results:  # barrier: merge in agent order
            session.merge(child)
            trajectories.append(trajectory)

        shared = update_shared(shared, trajectories)
        iterations_used = iteration + 1
        records.append(
            IterationRecord(
                iteration=iteration,
                trajectories=tuple(trajectories),
                shared_after=shared.entries,
            )
        )
        prior_by_agent = {t.agent_index: (t.thought, t.response) for t in trajectories}

        n_test = suite.n_test if suite is not None else None
        if converged(shared, problem.kind, n_test):
            has_converged = True
            break

    best = best_response(shared)
    answer = verify_extract(
        session, best, problem.kind, problem.id,
        temperature=config.temperature, seed=config.seed,
    )
    if problem.kind == "code" and tool_runner is not None and suite is not None:
        repaired = repair_code(
            session, tool_runner, answer.answer, suite,
            max_rounds=config.repair_rounds, problem_id=problem.id,
            temperature=config.temperature, seed=config.seed,
        )
        answer = replace(answer, answer=repaired)

    out_corpus = corpus
    if config.mode == "plus":
        out_corpus = update_episodic(corpus, problem.statement, shared)

    result = SolveResult(
        problem_id=problem.id,
        answer=answer,
        iterations_used=iterations_used,
        converged=has_converged,
        iteration_records=tuple(records),
        ledger=ledger.slice(problem.id),
        team=tuple(team),
        exemplars_used=exemplars,
        transcript=tuple(session.records),
    )
    return result, out_corpus


def solve_dataset(problems: list[Problem], config: SolveConfig, corpus: EpisodicCorpus,
                  backend, tool_runner=None, ledger: TokenLedger | None = None,
                  agent_workers: int = 1) -> tuple[list[SolveResult], EpisodicCorpus]:
    """Solve problems in order, threading the corpus through in plus mode.

    A terminal failure marks that problem failed and the run continues.
    """
    seen = set()
    for p in problems:
        if p.id in seen:
            raise DuplicateId(f"dataset repeats problem id {p.id!r}")
        seen.add(p.id)

    ledger = ledger if ledger is not None else TokenLedger()
    results = []
    for problem in problems:
        try:
            result, corpus = solve(
                problem, config, corpus, backend,
                tool_runner=tool_runner, ledger=ledger, agent_workers=agent_workers,
            )
        except MissingScript:
            raise
        except RoundtableError as exc:
            log.error("problem %s failed terminally: %s", problem.id, exc)
            result = SolveResult(
                problem_id=problem.id,
                answer=None,
                iterations_used=0,
                converged=False,
                iteration_records=(),
                ledger=ledger.slice(problem.id),
                failed=True,
                failure=f"{type(exc).__name__}: {exc}",
            )
        results.append(result)
    return results, corpus


# --- transcript files -------------------------------------------------------------

def transcript_header(problem: Problem, config: SolveConfig,
                      exemplars: tuple[Exemplar, ...]) -> dict:
    return {
        "kind": "header",
        "problem": {
            "id": problem.id,
            "kind": problem.kind,
            "statement": problem.statement,
            "gold_answer": problem.gold_answer,
            "sample_tests": [
                {"input": c.input, "expected_output": c.expected_output}
                for c in problem.sample_tests
            ],
            "preloaded_tests": [
                {"input": c.input, "expected_output": c.expected_output}
                for c in problem.preloaded_tests
            ],
        },
        "config": config.to_dict(),
        "exemplars": [
            {
                "id": ex.id,
                "problem": ex.problem_text,
                "reasoning": ex.reasoning,
                "solution": ex.solution,
                "origin": ex.origin,
            }
            for ex in exemplars
        ],
        "template_hash": registry_hash(),
    }


def write_transcript(path: str | Path, problem: Problem, config: SolveConfig,
                     exemplars: tuple[Exemplar, ...], result: SolveResult) -> None:
    lines = [json.dumps(transcript_header(problem, config, exemplars),
                        ensure_ascii=False, sort_keys=True)]
    for record in result.transcript:
        lines.append(json.dumps(record.to_json_obj(), ensure_ascii=False, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_transcript(path: str | Path) -> tuple[Problem, SolveConfig, list[Exemplar], list[dict]]:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise RoundtableError(f"{path} does not start with a transcript header")
    header = lines[0]
    pdata = header["problem"]
    problem = Problem(
        id=pdata["id"],
        kind=pdata["kind"],
        statement=pdata["statement"],
        gold_answer=pdata.get("gold_answer"),
        sample_tests=tuple(
            TestCase(input=c["input"], expected_output=c["expected_output"], origin="sample")
            for c in pdata.get("sample_tests", ())
        ),
        preloaded_tests=tuple(
            TestCase(
                input=c["input"], expected_output=c["expected_output"], origin="synthesized"
            )
            for c in pdata.get("preloaded_tests", ())
        ),
    )
    config = SolveConfig.from_dict(header["config"])
    exemplars = [
        Exemplar(
            id=e["id"],
            problem_text=e["problem"],
            solution=e["solution"],
            reasoning=e.get("reasoning"),
            origin=e.get("origin", "corpus"),
        )
        for e in header.get("exemplars", ())
    ]
    return problem, config, exemplars, lines[1:]


def replay_transcript(path: str | Path, tool_runner=None) -> tuple[bool, list[str]]:
    """Re-run a recorded problem against its own transcript and diff the records."""
    problem, config, exemplars, recorded = load_transcript(path)
    from .backend import ScriptedBackend

    script = ScriptedTranscript.from_records(recorded)
    backend = ScriptedBackend(script)
    result, _ = solve(
        problem, config, EpisodicCorpus(), backend,
        tool_runner=tool_runner, exemplar_override=exemplars,
    )
    replayed = [r.to_json_obj() for r in result.transcript]
    original = [r for r in recorded if r.get("kind") in ("llm", "tool")]
    diffs = []
    if len(replayed) != len(original):
        diffs.append(f"record count {len(replayed)} != {len(original)}")
    for n, (new, old) in enumerate(zip(replayed, original)):
        if new != old:
            diffs.append(f"record {n} differs: {new.get('tag')}/{new.get('turn')}")
    return not diffs, diffs
