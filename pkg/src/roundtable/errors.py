"""Exception types shared across the package."""


class RoundtableError(Exception):
    """Base class for every error raised by this package."""


# --- memory ---------------------------------------------------------------

class EmptyQuery(RoundtableError):
    """A retrieval query produced no tokens after normalization."""


class EmptyMemory(RoundtableError):
    """An operation needed at least one stored trajectory."""


class KindMismatch(RoundtableError):
    """Trajectories of different task kinds were mixed in one store."""


# --- prompts --------------------------------------------------------------

class PromptError(RoundtableError):
    pass


class UnknownTemplate(PromptError):
    """No template is registered under the requested id."""


class UnboundPlaceholder(PromptError):
    """A template placeholder was left without a binding."""


class UnusedBinding(PromptError):
    """A binding was supplied that the template never references."""


# --- backend --------------------------------------------------------------

class BackendError(RoundtableError):
    """A completion could not be obtained."""


class TransportError(BackendError):
    """The HTTP backend exhausted its retry budget."""


class MissingScript(BackendError):
    """A scripted run requested a key the transcript does not contain."""


# --- agents ---------------------------------------------------------------

class ContextInvariantViolation(RoundtableError):
    """An agent context broke the iteration-phase rules."""


class UnparseableScore(RoundtableError):
    """A judge completion contained no usable score."""


class NoAnswerFound(RoundtableError):
    """Verification could not extract an answer from the best response."""


class NoTests(RoundtableError):
    """A coding problem ended up with an empty test suite."""


# --- tool runner client ---------------------------------------------------

class ToolRunnerError(RoundtableError):
    """The external execution service failed or broke protocol."""


# --- harness --------------------------------------------------------------

class MalformedRecord(RoundtableError):
    """A dataset line could not be parsed into a problem record."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateId(RoundtableError):
    """Two records in one file share an id."""


class TrialShapeMismatch(RoundtableError):
    """Result sets being combined do not cover the same problems."""
