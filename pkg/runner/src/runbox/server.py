"""Line-delimited JSON service wrapping the sandbox.

The server announces itself with a single handshake line, then answers
every request line with exactly one response line, in order.  Requests
are processed strictly sequentially; there is no interleaving.
"""

from __future__ import annotations

import json
import sys

from .sandbox import (
    DEFAULT_MEMORY_LIMIT_MB,
    DEFAULT_TIME_LIMIT_MS,
    execute_program,
    run_test_cases,
)

PROTOCOL_VERSION = 1


class RequestError(Exception):
    """A request frame that cannot be honored as written."""


def _string_field(frame: dict, name: str, default=None) -> str:
    value = frame.get(name, default)
    if not isinstance(value, str):
        raise RequestError(f"field {name!r} must be a string")
    return value


def _positive_int_field(frame: dict, name: str, default: int) -> int:
    value = frame.get(name, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise RequestError(f"field {name!r} must be an integer")
    if value < 1:
        raise RequestError(f"field {name!r} must be at least 1")
    return value


def _limits(frame: dict) -> tuple[int, int]:
    time_limit_ms = _positive_int_field(frame, "time_limit_ms", DEFAULT_TIME_LIMIT_MS)
    memory_limit_mb = _positive_int_field(
        frame, "memory_limit_mb", DEFAULT_MEMORY_LIMIT_MB
    )
    return time_limit_ms, memory_limit_mb


def _source(frame: dict) -> str:
    if "source" not in frame:
        raise RequestError("field 'source' is required")
    source = frame["source"]
    if not isinstance(source, str):
        raise RequestError("field 'source' must be a string")
    if not source:
        raise RequestError("field 'source' must not be empty")
    return source


def _handle_execute(frame: dict, request_id: int) -> dict:
    source = _source(frame)
    stdin = _string_field(frame, "stdin", "")
    time_limit_ms, memory_limit_mb = _limits(frame)
    outcome = execute_program(
        source,
        stdin=stdin,
        time_limit_ms=time_limit_ms,
        memory_limit_mb=memory_limit_mb,
    )
    response = {"id": request_id}
    response.update(outcome.as_dict())
    return response


def _handle_run_tests(frame: dict, request_id: int) -> dict:
    source = _source(frame)
    cases = frame.get("cases")
    if not isinstance(cases, list) or not cases:
        raise RequestError("field 'cases' must be a non-empty list")
    parsed = []
    for index, case in enumerate(cases):
        if not isinstance(case, dict):
            raise RequestError(f"case {index} must be an object")
        case_input = case.get("input", "")
        expected = case.get("expected_output", "")
        if not isinstance(case_input, str) or not isinstance(expected, str):
            raise RequestError(
                f"case {index} fields 'input' and 'expected_output' must be strings"
            )
        parsed.append({"input": case_input, "expected_output": expected})
    time_limit_ms, memory_limit_mb = _limits(frame)
    outcomes, score = run_test_cases(
        source,
        parsed,
        time_limit_ms=time_limit_ms,
        memory_limit_mb=memory_limit_mb,
    )
    return {
        "id": request_id,
        "outcomes": [outcome.as_dict() for outcome in outcomes],
        "score": score,
    }


def handle_line(line: str) -> dict:
    """Turn one raw request line into one response frame.

    Anything that cannot be honored produces an error frame instead of an
    exception, so the serving loop never dies on bad input.
    """
    try:
        frame = json.loads(line)
    except json.JSONDecodeError:
        return {"id": None, "error": "request line is not valid JSON"}
    if not isinstance(frame, dict):
        return {"id": None, "error": "request frame must be a JSON object"}

    request_id = frame.get("id")
    if not isinstance(request_id, int) or isinstance(request_id, bool):
        return {"id": None, "error": "request is missing an integer id"}

    try:
        op = frame.get("op")
        if op == "execute":
            return _handle_execute(frame, request_id)
        if op == "run_tests":
            return _handle_run_tests(frame, request_id)
        raise RequestError(f"unknown op {op!r}")
    except RequestError as error:
        return {"id": request_id, "error": str(error)}
    except Exception as error:  # pragma: no cover - defensive catch-all
        return {"id": request_id, "error": f"internal error: {error}"}


def serve(instream=None, outstream=None) -> int:
    """Run the request loop until the input stream closes."""
    instream = instream if instream is not None else sys.stdin
    outstream = outstream if outstream is not None else sys.stdout

    _emit(outstream, {"proto": PROTOCOL_VERSION})
    for line in instream:
        if line.strip() == "":
            _emit(outstream, {"id": None, "error": "request line is empty"})
            continue
        _emit(outstream, handle_line(line))
    return 0


def _emit(outstream, frame: dict) -> None:
    outstream.write(json.dumps(frame) + "\n")
    outstream.flush()


def main() -> int:
    return serve()


if __name__ == "__main__":
    raise SystemExit(main())
