"""Sandboxed execution service speaking line-delimited JSON over stdio."""

from .sandbox import (
    CaseOutcome,
    ExecutionOutcome,
    classify,
    execute_program,
    normalize_output,
    run_test_cases,
    truncate_stream,
)
from .server import PROTOCOL_VERSION, handle_line, serve

__version__ = "0.1.0"

__all__ = [
    "CaseOutcome",
    "ExecutionOutcome",
    "PROTOCOL_VERSION",
    "classify",
    "execute_program",
    "handle_line",
    "normalize_output",
    "run_test_cases",
    "serve",
    "truncate_stream",
    "__version__",
]
