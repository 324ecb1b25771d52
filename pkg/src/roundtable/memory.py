"""Dual memory: an episodic retrieval corpus and a score-ranked shared store.

The episodic side is a BM25-indexed collection of solved problems used to
seed agent contexts. The shared side is a fixed-capacity store that keeps
the top-scoring trajectories produced so far, with a deterministic total
order so that runs replay byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import pickle
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import DuplicateId, EmptyMemory, EmptyQuery, KindMismatch, MalformedRecord

log = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75

INDEX_VERSION = 1
_INDEX_MAGIC = b"RTIX"

_TOKEN_RE = re.compile(r"[a-z0-9]+")

KINDS = ("math", "code")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs. No stemming, no stop words."""
    return _TOKEN_RE.findall(text.lower())


def as_score(value) -> Fraction:
    """Normalize a score given as int, decimal string, or Fraction to an exact rational."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as a score")


def score_text(score: Fraction) -> str:
    """Render a score exactly: integers plainly, finite decimals as decimals."""
    if score.denominator == 1:
        return str(score.numerator)
    den = score.denominator
    # a finite decimal expansion exists iff the denominator is 2^a * 5^b
    twos = fives = 0
    d = den
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{score.numerator}/{score.denominator}"
    exp = max(twos, fives)
    digits = str(abs(score.numerator) * 10**exp // den).rjust(exp + 1, "0")
    sign = "-" if score.numerator < 0 else ""
    return f"{sign}{digits[:-exp]}.{digits[-exp:]}"


@dataclass(frozen=True)
class Exemplar:
    """One solved problem: statement, optional reasoning trace, final solution."""

    id: str
    problem_text: str
    solution: str
    reasoning: str | None = None
    origin: str = "corpus"  # corpus | solved

    def __post_init__(self):
        if not self.id:
            raise ValueError("exemplar id must be non-empty")
        if not self.problem_text:
            raise ValueError("exemplar problem_text must be non-empty")
        if not self.solution:
            raise ValueError("exemplar solution must be non-empty")
        if self.origin not in ("corpus", "solved"):
            raise ValueError(f"unknown exemplar origin {self.origin!r}")


@dataclass(frozen=True)
class Feedback:
    """A judged evaluation of one trajectory."""

    explanation: str
    score: Fraction
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        object.__setattr__(self, "score", as_score(self.score))
        if self.score < 0:
            raise ValueError("score must be non-negative")
        if self.kind == "math" and self.score > 1:
            raise ValueError("math scores live in [0, 1]")
        if self.kind == "code" and self.score.denominator != 1:
            raise ValueError("code scores are integer pass counts")


@dataclass(frozen=True)
class Trajectory:
    """One agent's judged attempt at one iteration."""

    role_name: str
    thought: str
    response: str
    feedback: Feedback
    iteration: int
    agent_index: int

    def __post_init__(self):
        if self.iteration < 0 or self.agent_index < 0:
            raise ValueError("iteration and agent_index must be non-negative")


@dataclass(frozen=True)
class SharedMemory:
    """Fixed-capacity store of the best trajectories seen so far.

    Entries stay sorted by score descending. Capacity never changes after
    construction; updates return a new instance.
    """

    capacity: int
    entries: tuple[Trajectory, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")
        if len(self.entries) > self.capacity:
            raise ValueError("entries exceed capacity")

    @property
    def kind(self) -> str | None:
        return self.entries[0].feedback.kind if self.entries else None

    def min_score(self) -> Fraction | None:
        return self.entries[-1].feedback.score if self.entries else None


def update_shared(memory: SharedMemory, new: list[Trajectory] | tuple[Trajectory, ...]) -> SharedMemory:
    """Merge new trajectories, keep the top entries by score.

    Ties at the cutoff keep incumbents over newcomers, then prefer the
    lower iteration, then the lower agent index. All scores are exact
    rationals, so the order never depends on float rounding.
    """
    if not new:
        return memory
    kinds = {t.feedback.kind for t in new}
    if memory.entries:
        kinds.add(memory.entries[0].feedback.kind)
    if len(kinds) > 1:
        raise KindMismatch(f"mixed task kinds in shared memory: {sorted(kinds)}")

    candidates = [(t, 0) for t in memory.entries] + [(t, 1) for t in new]
    ranked = sorted(
        candidates,
        key=lambda pair: (
            -pair[0].feedback.score,
            pair[1],  # incumbents win ties at the cutoff
            pair[0].iteration,
            pair[0].agent_index,
        ),
    )
    kept = tuple(t for t, _ in ranked[: memory.capacity])
    return SharedMemory(capacity=memory.capacity, entries=kept)


def best_response(memory: SharedMemory) -> Trajectory:
    if not memory.entries:
        raise EmptyMemory("shared memory holds no trajectories")
    return memory.entries[0]


def converged(memory: SharedMemory, kind: str, n_test: int | None = None) -> bool:
    """True iff the store is non-empty and every entry has a perfect score."""
    if kind not in KINDS:
        raise ValueError(f"unknown task kind {kind!r}")
    if not memory.entries:
        return False
    if kind == "code":
        if n_test is None:
            raise ValueError("code convergence needs the test count")
        target = Fraction(n_test)
    else:
        target = Fraction(1)
    return all(t.feedback.score == target for t in memory.entries)


class EpisodicCorpus:
    """Append-only collection of exemplars with an incremental BM25 index."""

    def __init__(self, documents: list[Exemplar] | tuple[Exemplar, ...] = ()):
        self.documents: list[Exemplar] = []
        self._ids: set[str] = set()
        self._postings: dict[str, list[tuple[int, int]]] = {}
        self._doc_lens: list[int] = []
        for doc in documents:
            self.add(doc)

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def avg_doc_len(self) -> Fraction:
        if not self._doc_lens:
            return Fraction(0)
        return Fraction(sum(self._doc_lens), len(self._doc_lens))

    def has_id(self, doc_id: str) -> bool:
        return doc_id in self._ids

    def add(self, doc: Exemplar) -> None:
        if doc.id in self._ids:
            raise DuplicateId(f"corpus already holds id {doc.id!r}")
        idx = len(self.documents)
        self.documents.append(doc)
        self._ids.add(doc.id)
        tokens = tokenize(doc.problem_text)
        self._doc_lens.append(len(tokens))
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            self._postings.setdefault(term, []).append((idx, tf))

    # --- retrieval --------------------------------------------------------

    def scores_for(self, query_text: str) -> list[float]:
        """BM25 score of every document against the query, in insertion order.

        Contributions accumulate in query-token order so the result is
        bit-identical to a document-at-a-time scorer walking the same order.
        """
        terms = tokenize(query_text)
        if not terms:
            raise EmptyQuery("query has no tokens after normalization")
        n = len(self.documents)
        scores = [0.0] * n
        if n == 0:
            return scores
        avgdl = sum(self._doc_lens) / n
        for term in terms:
            postings = self._postings.get(term, ())
            df = len(postings)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            for idx, tf in postings:
                norm = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * self._doc_lens[idx] / avgdl)
                scores[idx] += idf * tf * (BM25_K1 + 1.0) / norm
        return scores

    # --- persistence ------------------------------------------------------

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for doc in self.documents:
            h.update(doc.id.encode("utf-8"))
            h.update(b"\x1f")
            h.update(doc.problem_text.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    def save_index(self, path: str | Path) -> None:
        payload = {
            "version": INDEX_VERSION,
            "fingerprint": self.fingerprint(),
            "postings": self._postings,
            "doc_lens": self._doc_lens,
        }
        with open(path, "wb") as fh:
            fh.write(_INDEX_MAGIC)
            pickle.dump(payload, fh)

    def load_index(self, path: str | Path) -> bool:
        """Adopt a saved index if it matches this corpus; else rebuild in place.

        Returns True when the sidecar was usable, False when it was rebuilt.
        """
        try:
            with open(path, "rb") as fh:
                magic = fh.read(len(_INDEX_MAGIC))
                if magic != _INDEX_MAGIC:
                    raise ValueError("bad magic")
                payload = pickle.load(fh)
            if payload.get("version") != INDEX_VERSION:
                raise ValueError("index version mismatch")
            if payload.get("fingerprint") != self.fingerprint():
                raise ValueError("index fingerprint mismatch")
        except (OSError, ValueError, pickle.UnpicklingError, EOFError) as exc:
            log.warning("index sidecar unusable (%s); rebuilding", exc)
            self._rebuild()
            return False
        self._postings = payload["postings"]
        self._doc_lens = payload["doc_lens"]
        return True

    def _rebuild(self) -> None:
        docs = self.documents
        self.documents = []
        self._ids = set()
        self._postings = {}
        self._doc_lens = []
        for doc in docs:
            self.add(doc)


def retrieve_external(corpus: EpisodicCorpus, query_text: str, k: int) -> list[Exemplar]:
    """Top-k exemplars by BM25, ties broken by ascending insertion order."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not tokenize(query_text):
        raise EmptyQuery("query has no tokens after normalization")
    if len(corpus) == 0:
        return []
    scores = corpus.scores_for(query_text)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [corpus.documents[i] for i in order[: min(k, len(scores))]]


def _solved_id(corpus: EpisodicCorpus, problem_text: str) -> str:
    base = "solved-" + hashlib.sha256(problem_text.encode("utf-8")).hexdigest()[:12]
    candidate = base
    n = 2
    while corpus.has_id(candidate):
        candidate = f"{base}-{n}"
        n += 1
    return candidate


def update_episodic(corpus: EpisodicCorpus, problem_text: str, memory: SharedMemory) -> EpisodicCorpus:
    """Append the best trajectory for a solved problem as a new exemplar."""
    best = best_response(memory)
    corpus.add(
        Exemplar(
            id=_solved_id(corpus, problem_text),
            problem_text=problem_text,
            solution=best.response,
            reasoning=best.thought or None,
            origin="solved",
        )
    )
    return corpus


# --- corpus file format ----------------------------------------------------

def corpus_from_jsonl(path: str | Path) -> EpisodicCorpus:
    corpus = EpisodicCorpus()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise MalformedRecord(line_no, "record is not an object")
            try:
                doc = Exemplar(
                    id=str(obj["id"]),
                    problem_text=obj["problem"],
                    solution=obj["solution"],
                    reasoning=obj.get("reasoning"),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(line_no, str(exc)) from exc
            corpus.add(doc)
    return corpus


def corpus_to_jsonl_bytes(corpus: EpisodicCorpus) -> bytes:
    """Canonical serialization; stable bytes for identical corpora."""
    lines = []
    for doc in corpus.documents:
        lines.append(
            json.dumps(
                {
                    "id": doc.id,
                    "problem": doc.problem_text,
                    "reasoning": doc.reasoning,
                    "solution": doc.solution,
                },
                ensure_ascii=False,
            )
        )
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def corpus_to_jsonl(corpus: EpisodicCorpus, path: str | Path) -> None:
    Path(path).write_bytes(corpus_to_jsonl_bytes(corpus))
