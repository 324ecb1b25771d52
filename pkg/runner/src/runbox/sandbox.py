"""Run untrusted Python programs with resource limits and capture the outcome.

Each execution gets a fresh temporary working directory, a minimal
environment, and an isolated interpreter (``python -I``).  Address-space and
CPU limits are applied through ``resource`` on platforms that support it;
elsewhere the program still runs but only the wall-clock limit is enforced.
"""

from __future__ import annotations

import os
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass

try:
    import resource
except ImportError:  # pragma: no cover - non-POSIX platforms
    resource = None

DEFAULT_TIME_LIMIT_MS = 10_000
DEFAULT_MEMORY_LIMIT_MB = 512
STREAM_LIMIT_BYTES = 64 * 1024

STATUS_OK = "ok"
STATUS_NONZERO_EXIT = "nonzero_exit"
STATUS_TIMEOUT = "timeout"
STATUS_MEMORY_EXCEEDED = "memory_exceeded"
STATUS_SPAWN_ERROR = "spawn_error"

VERDICT_PASS = "pass"
VERDICT_WRONG_ANSWER = "wrong_answer"
VERDICT_RTE = "rte"
VERDICT_TLE = "tle"


@dataclass
class ExecutionOutcome:
    """What happened when a program ran once against one stdin payload."""

    status: str
    stdout: str
    stderr: str
    wall_ms: int

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "wall_ms": self.wall_ms,
        }


@dataclass
class CaseOutcome:
    """Verdict for one test case of a program."""

    case_index: int
    verdict: str
    observed: str

    def as_dict(self) -> dict:
        return {
            "case_index": self.case_index,
            "verdict": self.verdict,
            "observed": self.observed,
        }


def truncate_stream(text: str, limit: int = STREAM_LIMIT_BYTES) -> str:
    """Cap a captured stream at ``limit`` bytes of UTF-8."""
    raw = text.encode("utf-8", errors="replace")
    if len(raw) <= limit:
        return text
    # a cut can land inside a multibyte sequence; dropping the partial
    # tail keeps the result strictly within the byte limit
    return raw[:limit].decode("utf-8", errors="ignore")


def normalize_output(text: str) -> str:
    """Canonical form for output comparison.

    Trailing whitespace is stripped from every line and trailing blank
    lines are dropped, so cosmetic differences do not flip a verdict.
    """
    lines = [line.rstrip() for line in text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines)


def _limit_setter(memory_limit_mb: int, time_limit_ms: int):
    """Build a preexec hook that applies rlimits inside the child."""
    if resource is None:
        return None
    address_space = memory_limit_mb * 1024 * 1024
    # A CPU ceiling one second above the wall limit backstops the parent's
    # wall-clock kill if the child somehow outlives it.
    cpu_seconds = max(1, -(-time_limit_ms // 1000) + 1)

    def apply_limits():
        resource.setrlimit(resource.RLIMIT_AS, (address_space, address_space))
        resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds))
        try:
            resource.setrlimit(resource.RLIMIT_NPROC, (64, 64))
        except (ValueError, OSError):
            pass

    return apply_limits


def _minimal_env(workdir: str) -> dict:
    env = {
        "PATH": os.environ.get("PATH", os.defpath),
        "HOME": workdir,
        "TMPDIR": workdir,
        "PYTHONIOENCODING": "utf-8",
    }
    for keep in ("LANG", "LC_ALL"):
        if keep in os.environ:
            env[keep] = os.environ[keep]
    return env


def _looks_out_of_memory(stderr: str, returncode: int) -> bool:
    if "MemoryError" in stderr:
        return True
    # malloc failures under RLIMIT_AS can abort the interpreter outright
    if returncode == -signal.SIGABRT and "memory" in stderr.lower():
        return True
    return False


def execute_program(
    source: str,
    stdin: str = "",
    time_limit_ms: int = DEFAULT_TIME_LIMIT_MS,
    memory_limit_mb: int = DEFAULT_MEMORY_LIMIT_MB,
) -> ExecutionOutcome:
    """Run ``source`` once with ``stdin`` and capture what happened.

    The program is written to ``program.py`` in a fresh temporary directory
    which is removed afterwards, so consecutive executions cannot observe
    each other's files.  On timeout the whole process group is killed and
    the reported wall time is at least the limit.
    """
    workdir = tempfile.mkdtemp(prefix="runbox-")
    try:
        program_path = os.path.join(workdir, "program.py")
        with open(program_path, "w", encoding="utf-8") as handle:
            handle.write(source)

        command = [sys.executable, "-I", program_path]
        started = time.monotonic()
        try:
            process = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=workdir,
                env=_minimal_env(workdir),
                text=True,
                encoding="utf-8",
                errors="replace",
                start_new_session=True,
                preexec_fn=_limit_setter(memory_limit_mb, time_limit_ms),
            )
        except (OSError, ValueError) as error:
            wall_ms = int((time.monotonic() - started) * 1000)
            return ExecutionOutcome(
                status=STATUS_SPAWN_ERROR,
                stdout="",
                stderr=truncate_stream(str(error)),
                wall_ms=wall_ms,
            )

        timed_out = False
        try:
            stdout, stderr = process.communicate(
                input=stdin, timeout=time_limit_ms / 1000.0
            )
        except subprocess.TimeoutExpired:
            timed_out = True
            _kill_group(process)
            try:
                stdout, stderr = process.communicate(timeout=5)
            except (subprocess.TimeoutExpired, ValueError):
                stdout, stderr = "", ""
        wall_ms = int((time.monotonic() - started) * 1000)

        stdout = truncate_stream(stdout or "")
        stderr = truncate_stream(stderr or "")

        if timed_out:
            # The measured wall time can round just under the limit; the
            # contract is that a timeout never reports less than the limit.
            return ExecutionOutcome(
                status=STATUS_TIMEOUT,
                stdout=stdout,
                stderr=stderr,
                wall_ms=max(wall_ms, time_limit_ms),
            )
        if process.returncode != 0:
            if _looks_out_of_memory(stderr, process.returncode):
                status = STATUS_MEMORY_EXCEEDED
            else:
                status = STATUS_NONZERO_EXIT
            return ExecutionOutcome(status, stdout, stderr, wall_ms)
        return ExecutionOutcome(STATUS_OK, stdout, stderr, wall_ms)
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def _kill_group(process: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(process.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError, OSError):
        try:
            process.kill()
        except ProcessLookupError:
            pass


def classify(outcome: ExecutionOutcome, expected_output: str) -> str:
    """Map one execution against an expected output to a verdict."""
    if outcome.status == STATUS_TIMEOUT:
        return VERDICT_TLE
    if outcome.status in (
        STATUS_NONZERO_EXIT,
        STATUS_SPAWN_ERROR,
        STATUS_MEMORY_EXCEEDED,
    ):
        return VERDICT_RTE
    if normalize_output(outcome.stdout) == normalize_output(expected_output):
        return VERDICT_PASS
    return VERDICT_WRONG_ANSWER


def run_test_cases(
    source: str,
    cases: list[dict],
    time_limit_ms: int = DEFAULT_TIME_LIMIT_MS,
    memory_limit_mb: int = DEFAULT_MEMORY_LIMIT_MB,
) -> tuple[list[CaseOutcome], int]:
    """Run a program against each case in order and tally passing verdicts.

    Every case is a fresh execution in its own working directory; a crash
    or timeout on one case does not stop the rest from running.
    """
    outcomes = []
    score = 0
    for index, case in enumerate(cases):
        result = execute_program(
            source,
            stdin=case.get("input", ""),
            time_limit_ms=time_limit_ms,
            memory_limit_mb=memory_limit_mb,
        )
        verdict = classify(result, case.get("expected_output", ""))
        if verdict == VERDICT_PASS:
            score += 1
        outcomes.append(CaseOutcome(index, verdict, result.stdout))
    return outcomes, score
