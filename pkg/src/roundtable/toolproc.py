"""Client for the external code-execution service.

The service is a separate process speaking line-delimited JSON over
stdio. On startup it emits a handshake line ``{"proto": 1}``; after that
every request line receives exactly one response line carrying the same
``id``. Field names here are frozen; both sides must agree byte for byte.

Execution statuses: ok, nonzero_exit, timeout, memory_exceeded, spawn_error.
Test verdicts: pass, wrong_answer, rte, tle.
"""

from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass

from .errors import ToolRunnerError

PROTO_VERSION = 1

DEFAULT_TIME_LIMIT_MS = 10_000
DEFAULT_MEMORY_LIMIT_MB = 512

EXEC_STATUSES = ("ok", "nonzero_exit", "timeout", "memory_exceeded", "spawn_error")
VERDICTS = ("pass", "wrong_answer", "rte", "tle")


@dataclass(frozen=True)
class ExecOutcome:
    status: str
    stdout: str
    stderr: str
    wall_ms: int


@dataclass(frozen=True)
class CaseOutcome:
    case_index: int
    verdict: str
    observed: str


class ProcessRunner:
    """Owns one service subprocess and serializes requests to it."""

    def __init__(self, argv: list[str], handshake_timeout: float = 15.0):
        self._lock = threading.Lock()
        self._next_id = 0
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as exc:
            raise ToolRunnerError(f"could not start runner {argv!r}: {exc}") from exc
        hello = self._read_line(timeout=handshake_timeout)
        try:
            handshake = json.loads(hello)
        except json.JSONDecodeError as exc:
            raise ToolRunnerError(f"bad handshake line: {hello!r}") from exc
        if handshake.get("proto") != PROTO_VERSION:
            raise ToolRunnerError(f"unsupported protocol: {handshake!r}")

    def _read_line(self, timeout: float | None = None) -> str:
        # the subprocess answers each request promptly or dies; a blocking
        # readline with a liveness check is enough here
        line = self._proc.stdout.readline()
        if not line:
            raise ToolRunnerError("runner closed its output stream")
        return line

    def _roundtrip(self, payload: dict) -> dict:
        with self._lock:
            self._next_id += 1
            payload["id"] = self._next_id
            try:
                self._proc.stdin.write(json.dumps(payload) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise ToolRunnerError(f"runner pipe broken: {exc}") from exc
            raw = self._read_line()
        try:
            response = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ToolRunnerError(f"runner sent invalid JSON: {raw!r}") from exc
        if response.get("id") != payload["id"]:
            raise ToolRunnerError(
                f"response id {response.get('id')!r} does not match request id {payload['id']}"
            )
        if "error" in response:
            raise ToolRunnerError(f"runner error: {response['error']}")
        return response

    def execute(self, source: str, stdin: str = "",
                time_limit_ms: int = DEFAULT_TIME_LIMIT_MS,
                memory_limit_mb: int = DEFAULT_MEMORY_LIMIT_MB) -> ExecOutcome:
        response = self._roundtrip(
            {
                "op": "execute",
                "source": source,
                "stdin": stdin,
                "time_limit_ms": time_limit_ms,
                "memory_limit_mb": memory_limit_mb,
            }
        )
        try:
            outcome = ExecOutcome(
                status=response["status"],
                stdout=response["stdout"],
                stderr=response["stderr"],
                wall_ms=int(response["wall_ms"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ToolRunnerError(f"malformed execute response: {response!r}") from exc
        if outcome.status not in EXEC_STATUSES:
            raise ToolRunnerError(f"unknown execution status {outcome.status!r}")
        return outcome

    def run_tests(self, source: str, cases: list[dict],
                  time_limit_ms: int = DEFAULT_TIME_LIMIT_MS,
                  memory_limit_mb: int = DEFAULT_MEMORY_LIMIT_MB) -> tuple[list[CaseOutcome], int]:
        response = self._roundtrip(
            {
                "op": "run_tests",
                "source": source,
                "cases": cases,
                "time_limit_ms": time_limit_ms,
                "memory_limit_mb": memory_limit_mb,
            }
        )
        try:
            outcomes = [
                CaseOutcome(
                    case_index=int(o["case_index"]),
                    verdict=o["verdict"],
                    observed=o["observed"],
                )
                for o in response["outcomes"]
            ]
            score = int(response["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ToolRunnerError(f"malformed run_tests response: {response!r}") from exc
        for o in outcomes:
            if o.verdict not in VERDICTS:
                raise ToolRunnerError(f"unknown verdict {o.verdict!r}")
        return outcomes, score

    def close(self) -> None:
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=5)
        except Exception:
            self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False
