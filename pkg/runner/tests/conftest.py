"""Shared helpers for the runbox test suite."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

ECHO_PROGRAM = "import sys\nsys.stdout.write(sys.stdin.read())\n"
LOOP_PROGRAM = "while True:\n    pass\n"
DIVIDE_BY_ZERO_PROGRAM = "print(1 / 0)\n"
WRONG_OUTPUT_PROGRAM = "input()\nprint(43)\n"
DOUBLE_PROGRAM = "print(int(input()) * 2)\n"
SYNTAX_FAULT_PROGRAM = "def broken(:\n    pass\n"


class Service:
    """A live runbox subprocess with line-at-a-time request helpers."""

    def __init__(self):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "runbox"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        self.handshake = json.loads(self.proc.stdout.readline())

    def send_raw(self, line: str) -> dict:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        return json.loads(self.proc.stdout.readline())

    def send(self, frame: dict) -> dict:
        return self.send_raw(json.dumps(frame))

    def close(self) -> int:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)
        return self.proc.returncode


@pytest.fixture
def service():
    svc = Service()
    yield svc
    if svc.proc.poll() is None:
        svc.proc.kill()
        svc.proc.wait(timeout=10)
