"""Multi-agent deliberation engine with dual memory and a benchmark harness."""

from .agents import (
    AgentContext,
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
from .backend import (
    ChatRequest,
    Completion,
    HttpBackend,
    Message,
    RecordingSession,
    ScriptedBackend,
    ScriptedTranscript,
    TokenLedger,
)
from .errors import RoundtableError
from .harness import (
    RunReport,
    TrialOutcome,
    aggregate,
    compute_agreement,
    grade_code,
    grade_math,
    load_dataset,
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
from .orchestrator import (
    Problem,
    SolveConfig,
    SolveResult,
    expected_call_count,
    solve,
    solve_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AgentContext",
    "AgentRole",
    "ChatRequest",
    "Completion",
    "EpisodicCorpus",
    "Exemplar",
    "Feedback",
    "HttpBackend",
    "Message",
    "Problem",
    "RecordingSession",
    "RoundtableError",
    "RunReport",
    "ScriptedBackend",
    "ScriptedTranscript",
    "SharedMemory",
    "SolveConfig",
    "SolveResult",
    "TestCase",
    "TestSuite",
    "TokenLedger",
    "Trajectory",
    "TrialOutcome",
    "VerifiedAnswer",
    "aggregate",
    "best_response",
    "build_context",
    "compute_agreement",
    "converged",
    "expected_call_count",
    "grade_code",
    "grade_math",
    "judge",
    "load_dataset",
    "plan_team",
    "repair_code",
    "retrieve_external",
    "run_agent",
    "self_retrieve",
    "solve",
    "solve_dataset",
    "synthesize_tests",
    "update_episodic",
    "update_shared",
    "verify_extract",
]
