from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Any, Sequence

from ..exceptions import EngineError
from ..functions import AIFunction
from ..messages import ChatMessage, ChatRole


@dataclass(frozen=True)
class Completion:
    """An engine's answer: the assistant message plus token usage."""

    message: ChatMessage
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.message.role is not ChatRole.ASSISTANT:
            raise ValueError("a completion must carry an assistant message")
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")


class BaseEngine(abc.ABC):
    """Uniform contract for inference backends.

    Subclasses set ``max_context_size`` and implement :meth:`message_len` and
    :meth:`predict`. ``message_len`` must include whatever per-message wrapper
    tokens the engine adds when building its wire prompt, so that the agent
    can budget the context window without engine-specific logic.

    Engines are shared between agents: ``predict`` may be awaited
    concurrently and must not mutate the message list it is given.
    """

    max_context_size: int

    @abc.abstractmethod
    def message_len(self, message: ChatMessage) -> int: ...

    @abc.abstractmethod
    async def predict(
        self, messages: Sequence[ChatMessage], functions: Sequence[AIFunction] | None = None, **hyperparams: Any
    ) -> Completion: ...

    def function_token_reserve(self, functions: Sequence[AIFunction]) -> int:
        return 0

    async def close(self) -> None:
        pass


class ClosableEngine(BaseEngine, abc.ABC):
    """Engine base with an idempotent close flag; predict after close raises EngineError."""

    _closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    def _check_open(self):
        if self._closed:
            raise EngineError(f"{type(self).__name__} is closed")

    async def close(self) -> None:
        self._closed = True
