"""Model backends: a scripted transcript player and a live HTTP client.

Every completion flows through a RecordingSession, which stamps requests
with routing keys (problem, tag, role, iteration, turn), tracks token
usage, and accumulates the records that become the run transcript. The
scripted backend resolves each request key against a canned transcript,
so golden runs are bit-reproducible and never touch the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import BackendError, MissingScript, TransportError

log = logging.getLogger(__name__)

SPEAKERS = ("system", "user", "assistant", "tool")
TAGS = ("planner", "agent", "judge", "verifier", "retrieval", "synthesis")

ENV_BASE_URL = "OPENAI_API_BASE"
ENV_API_KEY = "OPENAI_API_KEY"

TOKEN_ESTIMATE_FACTOR = 1.3


@dataclass(frozen=True)
class Message:
    speaker: str
    content: str

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ValueError(f"unknown speaker {self.speaker!r}")


@dataclass(frozen=True)
class ChatRequest:
    """One completion request plus the routing key that identifies it."""

    messages: tuple[Message, ...]
    temperature: float
    tag: str
    problem_id: str = ""
    role: str = ""
    iteration: int = 0
    turn: int = 0
    max_tokens: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a request needs at least one message")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must lie in [0, 2]")
        if self.tag not in TAGS:
            raise ValueError(f"unknown request tag {self.tag!r}")

    def key(self) -> tuple[str, str, str, int, int]:
        return (self.problem_id, self.tag, self.role, self.iteration, self.turn)


@dataclass(frozen=True)
class Completion:
    text: str
    prompt_tokens: int
    completion_tokens: int
    estimated: bool = False


def estimate_tokens(text: str) -> int:
    """Whitespace-token count scaled up; used when no real counts exist."""
    return math.ceil(len(text.split()) * TOKEN_ESTIMATE_FACTOR)


def canonical_prompt(messages: tuple[Message, ...]) -> str:
    return "\n\n".join(f"[{m.speaker}]\n{m.content}" for m in messages)


def prompt_digest(messages: tuple[Message, ...]) -> str:
    return hashlib.sha256(canonical_prompt(messages).encode("utf-8")).hexdigest()


# --- token accounting -------------------------------------------------------

class TokenLedger:
    """Per-(problem, tag) call and token counters. Updates are serialized."""

    def __init__(self):
        self._lock = threading.Lock()
        self._cells: dict[tuple[str, str], dict[str, int]] = {}
        self._estimated = False

    def record(self, problem_id: str, tag: str, prompt_tokens: int, completion_tokens: int,
               estimated: bool) -> None:
        if prompt_tokens < 0 or completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        with self._lock:
            cell = self._cells.setdefault(
                (problem_id, tag), {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0}
            )
            cell["calls"] += 1
            cell["prompt_tokens"] += prompt_tokens
            cell["completion_tokens"] += completion_tokens
            if estimated:
                self._estimated = True

    @property
    def any_estimated(self) -> bool:
        return self._estimated

    def calls(self, problem_id: str | None = None) -> int:
        with self._lock:
            return sum(
                cell["calls"]
                for (pid, _), cell in self._cells.items()
                if problem_id is None or pid == problem_id
            )

    def slice(self, problem_id: str) -> dict:
        """Deterministic per-problem view: one row per tag plus totals."""
        with self._lock:
            rows = {
                tag: dict(cell)
                for (pid, tag), cell in sorted(self._cells.items())
                if pid == problem_id
            }
        totals = {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0}
        for cell in rows.values():
            for key in totals:
                totals[key] += cell[key]
        return {"by_tag": rows, "totals": totals, "estimated": self._estimated}

    def to_dict(self) -> dict:
        with self._lock:
            rows = [
                {"problem_id": pid, "tag": tag, **cell}
                for (pid, tag), cell in sorted(self._cells.items())
            ]
        totals = {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0}
        for row in rows:
            for key in totals:
                totals[key] += row[key]
        return {"rows": rows, "totals": totals, "estimated": self._estimated}


def record_usage(ledger: TokenLedger, problem_id: str, tag: str, completion: Completion) -> TokenLedger:
    ledger.record(problem_id, tag, completion.prompt_tokens, completion.completion_tokens,
                  completion.estimated)
    return ledger


# --- scripted backend --------------------------------------------------------

class ScriptedTranscript:
    """Canned responses addressed by request key, with a digest fallback.

    Exact entries are keyed by (problem_id, tag, role, iteration, turn).
    Wildcard entries match any request whose rendered prompt hashes to the
    stored digest. A lookup that matches neither is a loud error: golden
    tests must never receive silent defaults.
    """

    def __init__(self):
        self._exact: dict[tuple[str, str, str, int, int], str] = {}
        self._by_digest: dict[str, str] = {}

    @classmethod
    def from_records(cls, records) -> "ScriptedTranscript":
        script = cls()
        for obj in records:
            if obj.get("kind") not in (None, "llm"):
                continue
            if "response" not in obj:
                continue
            if "digest" in obj and "tag" not in obj:
                script.add_wildcard(obj["digest"], obj["response"])
            else:
                script.add(
                    problem_id=obj.get("problem_id", ""),
                    tag=obj["tag"],
                    role=obj.get("role", ""),
                    iteration=int(obj.get("iteration", 0)),
                    turn=int(obj.get("turn", 0)),
                    response=obj["response"],
                )
        return script

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedTranscript":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(json.loads(line))
        return cls.from_records(records)

    def add(self, problem_id: str, tag: str, role: str, iteration: int, turn: int,
            response: str) -> None:
        self._exact[(problem_id, tag, role, iteration, turn)] = response

    def add_wildcard(self, digest: str, response: str) -> None:
        self._by_digest[digest] = response

    def lookup(self, request: ChatRequest) -> str:
        key = request.key()
        if key in self._exact:
            return self._exact[key]
        digest = prompt_digest(request.messages)
        if digest in self._by_digest:
            return self._by_digest[digest]
        raise MissingScript(
            f"no scripted response for key (problem_id={key[0]!r}, tag={key[1]!r}, "
            f"role={key[2]!r}, iteration={key[3]}, turn={key[4]}) or digest {digest[:16]}..."
        )


class ScriptedBackend:
    """Replays a ScriptedTranscript; token usage is estimated."""

    kind = "scripted"

    def __init__(self, transcript: ScriptedTranscript, model: str = "scripted"):
        self.transcript = transcript
        self.model = model

    def complete(self, request: ChatRequest) -> Completion:
        text = self.transcript.lookup(request)
        return Completion(
            text=text,
            prompt_tokens=estimate_tokens(canonical_prompt(request.messages)),
            completion_tokens=estimate_tokens(text),
            estimated=True,
        )


# --- live backend -------------------------------------------------------------

_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


class HttpBackend:
    """OpenAI-style chat-completions client with bounded retries.

    The endpoint URL and credential come from the environment only
    (OPENAI_API_BASE, OPENAI_API_KEY); they are never read from config
    files or transcripts.
    """

    kind = "http"

    def __init__(self, model: str, base_url: str | None = None, api_key: str | None = None,
                 timeout: float = 60.0, max_attempts: int = 3, backoff_base: float = 0.5,
                 session=None):
        self.model = model
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        if not self.base_url:
            raise BackendError(f"no endpoint URL; set {ENV_BASE_URL}")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self.retries_used = 0

    def _wire_messages(self, messages: tuple[Message, ...]) -> list[dict]:
        wire = []
        for m in messages:
            if m.speaker == "tool":
                # plain chat-completions servers reject bare tool turns
                wire.append({"role": "user", "content": "[tool output]\n" + m.content})
            else:
                wire.append({"role": m.speaker, "content": m.content})
        return wire

    def complete(self, request: ChatRequest) -> Completion:
        import requests

        payload: dict = {
            "model": self.model,
            "messages": self._wire_messages(request.messages),
            "temperature": request.temperature,
        }
        if request.max_tokens is not None:
            payload["max_tokens"] = request.max_tokens
        if request.seed is not None:
            payload["seed"] = request.seed
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        url = f"{self.base_url}/chat/completions"
        last_error = ""
        for attempt in range(self.max_attempts):
            if attempt:
                delay = self.backoff_base * (2 ** (attempt - 1)) + random.uniform(
                    0, self.backoff_base / 4
                )
                time.sleep(delay)
            try:
                resp = self._session.post(url, json=payload, headers=headers,
                                          timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = f"transport failure: {exc}"
                self.retries_used += 1
                continue
            if resp.status_code in _TRANSIENT_STATUS:
                last_error = f"HTTP {resp.status_code}"
                self.retries_used += 1
                continue
            if resp.status_code != 200:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                body = resp.json()
                text = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion body: {exc}") from exc
            usage = body.get("usage") or {}
            if "prompt_tokens" in usage and "completion_tokens" in usage:
                return Completion(
                    text=text,
                    prompt_tokens=int(usage["prompt_tokens"]),
                    completion_tokens=int(usage["completion_tokens"]),
                )
            return Completion(
                text=text,
                prompt_tokens=estimate_tokens(canonical_prompt(request.messages)),
                completion_tokens=estimate_tokens(text),
                estimated=True,
            )
        raise TransportError(
            f"gave up after {self.max_attempts} attempts; last error: {last_error}"
        )


# --- recording ----------------------------------------------------------------

@dataclass(frozen=True)
class CallRecord:
    """One transcript line: an LLM exchange or a tool event."""

    kind: str  # llm | tool
    problem_id: str
    tag: str
    role: str
    iteration: int
    turn: int
    prompt_digest: str
    response: str
    prompt_tokens: int
    completion_tokens: int
    estimated: bool
    template_hash: str
    detail: str = ""

    def to_json_obj(self) -> dict:
        obj = {
            "kind": self.kind,
            "problem_id": self.problem_id,
            "tag": self.tag,
            "role": self.role,
            "iteration": self.iteration,
            "turn": self.turn,
            "prompt_digest": self.prompt_digest,
            "response": self.response,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "estimated": self.estimated,
            "template_hash": self.template_hash,
        }
        if self.detail:
            obj["detail"] = self.detail
        return obj


class RecordingSession:
    """Routes completions through one backend while logging every exchange.

    ``scoped()`` children share the backend and ledger but buffer their own
    records, so concurrent agents can fan out and the parent merges their
    buffers in a deterministic order at the barrier.
    """

    def __init__(self, backend, ledger: TokenLedger, template_hash: str):
        self.backend = backend
        self.ledger = ledger
        self.template_hash = template_hash
        self.records: list[CallRecord] = []

    def scoped(self) -> "RecordingSession":
        return RecordingSession(self.backend, self.ledger, self.template_hash)

    def merge(self, child: "RecordingSession") -> None:
        self.records.extend(child.records)

    def complete(self, request: ChatRequest) -> Completion:
        completion = self.backend.complete(request)
        self.ledger.record(
            request.problem_id,
            request.tag,
            completion.prompt_tokens,
            completion.completion_tokens,
            completion.estimated,
        )
        self.records.append(
            CallRecord(
                kind="llm",
                problem_id=request.problem_id,
                tag=request.tag,
                role=request.role,
                iteration=request.iteration,
                turn=request.turn,
                prompt_digest=prompt_digest(request.messages),
                response=completion.text,
                prompt_tokens=completion.prompt_tokens,
                completion_tokens=completion.completion_tokens,
                estimated=completion.estimated,
                template_hash=self.template_hash,
            )
        )
        return completion

    def note_tool_event(self, problem_id: str, role: str, iteration: int, turn: int,
                        detail: str) -> None:
        self.records.append(
            CallRecord(
                kind="tool",
                problem_id=problem_id,
                tag="agent",
                role=role,
                iteration=iteration,
                turn=turn,
                prompt_digest="",
                response="",
                prompt_tokens=0,
                completion_tokens=0,
                estimated=False,
                template_hash=self.template_hash,
                detail=detail,
            )
        )
