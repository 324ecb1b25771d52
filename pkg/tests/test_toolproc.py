"""Client-side protocol handling against small stub services."""

from __future__ import annotations

import sys

import pytest

from roundtable.errors import ToolRunnerError
from roundtable.toolproc import ProcessRunner

GOOD_SERVICE = r"""
import json, sys
print(json.dumps({"proto": 1}), flush=True)
for line in sys.stdin:
    req = json.loads(line)
    if req["op"] == "execute":
        resp = {"id": req["id"], "status": "ok", "stdout": str(req["id"]),
                "stderr": "", "wall_ms": 5}
    else:
        outcomes = [
            {"case_index": i, "verdict": "pass", "observed": c["expected_output"]}
            for i, c in enumerate(req["cases"])
        ]
        resp = {"id": req["id"], "outcomes": outcomes, "score": len(outcomes)}
    print(json.dumps(resp), flush=True)
"""


def service(body):
    return [sys.executable, "-c", body]


class TestHandshake:
    def test_good_handshake(self):
        with ProcessRunner(service(GOOD_SERVICE)) as runner:
            outcome = runner.execute("print(1)")
            assert outcome.status == "ok"

    def test_wrong_protocol_version(self):
        body = 'import json; print(json.dumps({"proto": 99}), flush=True)'
        with pytest.raises(ToolRunnerError, match="unsupported protocol"):
            ProcessRunner(service(body))

    def test_garbage_handshake(self):
        body = 'print("hello world", flush=True)'
        with pytest.raises(ToolRunnerError, match="bad handshake"):
            ProcessRunner(service(body))

    def test_immediate_exit(self):
        with pytest.raises(ToolRunnerError, match="closed its output"):
            ProcessRunner(service("pass"))

    def test_unstartable_command(self):
        with pytest.raises(ToolRunnerError, match="could not start"):
            ProcessRunner(["/nonexistent/never-a-binary"])


class TestRoundtrip:
    def test_request_ids_increment(self):
        with ProcessRunner(service(GOOD_SERVICE)) as runner:
            first = runner.execute("x")
            second = runner.execute("y")
        # the stub echoes the request id through stdout
        assert (first.stdout, second.stdout) == ("1", "2")

    def test_run_tests_shape(self):
        with ProcessRunner(service(GOOD_SERVICE)) as runner:
            outcomes, score = runner.run_tests(
                "prog", [{"input": "a", "expected_output": "b"}]
            )
        assert score == 1
        assert outcomes[0].case_index == 0
        assert outcomes[0].verdict == "pass"
        assert outcomes[0].observed == "b"

    def test_mismatched_id_is_rejected(self):
        body = r"""
import json, sys
print(json.dumps({"proto": 1}), flush=True)
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": 777, "status": "ok", "stdout": "", "stderr": "",
                      "wall_ms": 1}), flush=True)
"""
        with ProcessRunner(service(body)) as runner:
            with pytest.raises(ToolRunnerError, match="does not match"):
                runner.execute("x")

    def test_error_frame_is_raised(self):
        body = r"""
import json, sys
print(json.dumps({"proto": 1}), flush=True)
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "error": "unsupported op"}), flush=True)
"""
        with ProcessRunner(service(body)) as runner:
            with pytest.raises(ToolRunnerError, match="unsupported op"):
                runner.execute("x")

    def test_invalid_json_response(self):
        body = r"""
import json, sys
print(json.dumps({"proto": 1}), flush=True)
sys.stdin.readline()
print("not json", flush=True)
"""
        with ProcessRunner(service(body)) as runner:
            with pytest.raises(ToolRunnerError, match="invalid JSON"):
                runner.execute("x")

    def test_unknown_status_is_rejected(self):
        body = r"""
import json, sys
print(json.dumps({"proto": 1}), flush=True)
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "status": "melted", "stdout": "",
                      "stderr": "", "wall_ms": 1}), flush=True)
"""
        with ProcessRunner(service(body)) as runner:
            with pytest.raises(ToolRunnerError, match="unknown execution status"):
                runner.execute("x")

    def test_missing_fields_are_rejected(self):
        body = r"""
import json, sys
print(json.dumps({"proto": 1}), flush=True)
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "status": "ok"}), flush=True)
"""
        with ProcessRunner(service(body)) as runner:
            with pytest.raises(ToolRunnerError, match="malformed execute response"):
                runner.execute("x")


class TestLifecycle:
    def test_close_terminates_the_subprocess(self):
        runner = ProcessRunner(service(GOOD_SERVICE))
        proc = runner._proc
        runner.close()
        assert proc.poll() is not None

    def test_context_manager_closes(self):
        with ProcessRunner(service(GOOD_SERVICE)) as runner:
            proc = runner._proc
        assert proc.poll() is not None
