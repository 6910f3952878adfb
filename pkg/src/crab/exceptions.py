"""Exception types raised across the framework."""

from __future__ import annotations

import enum


class CrabException(Exception):
    """Base class for every error raised by crab."""


class InvalidMessage(CrabException, ValueError):
    """A chat message violates the role/name/function_call rules."""


class FormatError(CrabException, ValueError):
    """Serialized data (a transcript or a provider response) could not be parsed."""


class EngineError(CrabException):
    """An engine failed to produce a completion (transport, protocol, or closed engine)."""


class ContextOverflow(CrabException):
    """The always-included messages alone do not fit in the engine's context window."""


class RoundInProgress(CrabException):
    """A round was started on an agent that is already running one."""


class ScriptExhausted(CrabException):
    """The scripted engine was asked for a completion after its script ran out."""


class PromptAssertionFailed(CrabException, AssertionError):
    """A scripted step's assertion on the received prompt did not hold."""


class CallErrorKind(enum.Enum):
    NO_SUCH_FUNCTION = "no_such_function"
    WRAPPED_CALL = "wrapped_call"
    UNKNOWN_PARAM = "unknown_param"
    VALIDATION = "validation"


class CallError(CrabException):
    """A function call requested by the model could not be completed.

    ``kind`` places the failure in one of four buckets: the function does not
    exist, the handler raised, the model passed parameters that do not exist,
    or the parameters exist but their values are malformed.
    """

    def __init__(self, kind: CallErrorKind, detail: str, name: str | None = None):
        super().__init__(detail)
        self.kind = kind
        self.detail = detail
        self.name = name

    def __repr__(self):
        return f"CallError({self.kind.name}, {self.detail!r})"
