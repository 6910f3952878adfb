"""The conversation orchestrator.

An :class:`Agent` binds one engine, one chat history and one set of callable
functions. Its behaviour is split into overridable coroutines:

* :meth:`Agent.get_prompt` chooses what the model sees,
* :meth:`Agent.do_function_call` runs a requested function,
* :meth:`Agent.handle_function_call_exception` turns a failed call into
  feedback and decides whether the model may try again.
"""

from __future__ import annotations

import contextlib
import inspect
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import AsyncIterator, Iterable, Sequence

from .engines.base import BaseEngine, Completion
from .exceptions import CallError, CallErrorKind, ContextOverflow, RoundInProgress
from .functions import AIFunction, FunctionRegistry
from .messages import ChatMessage, FunctionCall, dumps_transcript, loads_transcript

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssistantMessage:
    """The model asked for a function call; ``message`` carries it."""

    message: ChatMessage


@dataclass(frozen=True)
class FunctionResult:
    """The answer recorded for the preceding call.

    For a successful call this is the function's output (role FUNCTION). For a
    failed call it is the feedback message the exception handler appended, and
    ``error`` is set.
    """

    message: ChatMessage
    error: CallError | None = None


@dataclass(frozen=True)
class FinalMessage:
    message: ChatMessage


RoundEvent = AssistantMessage | FunctionResult | FinalMessage


def _collect_ai_functions(obj) -> list[AIFunction]:
    found = []
    for name, member in inspect.getmembers(type(obj)):
        opts = getattr(member, "__ai_function__", None)
        if opts is None:
            continue
        bound = getattr(obj, name)
        found.append(AIFunction(bound, name=opts["name"] or name, desc=opts["desc"], timeout=opts["timeout"]))
    return found


class Agent:
    """One conversation with one engine.

    Functions come from methods decorated with :func:`~crab.ai_function` and
    from the ``functions`` argument; both end up in :attr:`functions`.

    The prompt sent to the engine is ``always_included_messages`` (the system
    prompt, if any, then the persistent messages) followed by the longest
    suffix of :attr:`chat_history` that fits in what remains of the context
    window after reserving ``desired_response_tokens`` and the engine's
    function token reserve.

    Rounds on one agent are strictly sequential; starting a second one while
    the first runs raises :class:`RoundInProgress`. If a round fails, every
    message it appended is removed again.
    """

    def __init__(
        self,
        engine: BaseEngine,
        system_prompt: str | None = None,
        always_included_messages: Iterable[ChatMessage] = (),
        chat_history: Iterable[ChatMessage] = (),
        functions: Iterable[AIFunction] = (),
        retry_attempts: int = 1,
        desired_response_tokens: int = 450,
        max_function_rounds: int = 10,
    ):
        if retry_attempts < 0:
            raise ValueError("retry_attempts must be non-negative")
        if max_function_rounds < 1:
            raise ValueError("max_function_rounds must be positive")
        if not 0 <= desired_response_tokens < engine.max_context_size:
            raise ValueError(
                f"desired_response_tokens ({desired_response_tokens}) must be below the engine's "
                f"context size ({engine.max_context_size})"
            )
        self.engine = engine
        self.system_prompt = system_prompt
        self.always_included_messages: list[ChatMessage] = []
        if system_prompt is not None:
            self.always_included_messages.append(ChatMessage.system(system_prompt))
        self.always_included_messages.extend(always_included_messages)
        self.chat_history: list[ChatMessage] = list(chat_history)
        self.retry_attempts = retry_attempts
        self.desired_response_tokens = desired_response_tokens
        self.max_function_rounds = max_function_rounds

        self.functions = FunctionRegistry(_collect_ai_functions(self))
        for fn in functions:
            self.functions.register(fn)

        self.last_completion: Completion | None = None
        self.prompt_tokens_used = 0
        self.completion_tokens_used = 0
        self._in_round = False
        self._len_cache: dict[ChatMessage, int] = {}

    # ==== token accounting ====
    def message_token_len(self, message: ChatMessage) -> int:
        n = self._len_cache.get(message)
        if n is None:
            n = self._len_cache[message] = self.engine.message_len(message)
        return n

    def function_token_reserve(self) -> int:
        return self.engine.function_token_reserve(list(self.functions))

    async def get_prompt(self) -> list[ChatMessage]:
        """Persistent messages plus the newest history that fits the token budget.

        Whole messages only, taken newest first; a message exactly filling the
        remaining budget is included.
        """
        fixed = sum(self.message_token_len(m) for m in self.always_included_messages)
        budget = self.engine.max_context_size - self.desired_response_tokens - self.function_token_reserve() - fixed
        if budget < 0:
            raise ContextOverflow(
                f"always-included messages need {fixed} tokens but only "
                f"{fixed + budget} are available after reserving response and function tokens"
            )
        used = 0
        start = len(self.chat_history)
        for i in range(len(self.chat_history) - 1, -1, -1):
            n = self.message_token_len(self.chat_history[i])
            if used + n > budget:
                break
            used += n
            start = i
        return self.always_included_messages + self.chat_history[start:]

    # ==== rounds ====
    @contextlib.contextmanager
    def _round(self):
        if self._in_round:
            raise RoundInProgress("this agent is already running a round")
        self._in_round = True
        mark = len(self.chat_history)
        try:
            yield
        except GeneratorExit:
            raise
        except BaseException:
            del self.chat_history[mark:]
            raise
        finally:
            self._in_round = False

    def _record(self, completion: Completion):
        self.last_completion = completion
        self.prompt_tokens_used += completion.prompt_tokens
        self.completion_tokens_used += completion.completion_tokens

    async def get_model_completion(self, include_functions: bool = True, **hyperparams) -> Completion:
        prompt = await self.get_prompt()
        functions = list(self.functions) if include_functions else []
        log.debug("predict: %d messages, %d functions", len(prompt), len(functions))
        completion = await self.engine.predict(prompt, functions, **hyperparams)
        self._record(completion)
        return completion

    async def chat_round(self, query: str, **hyperparams) -> ChatMessage:
        """Send one user message and return the model's reply, without function calling."""
        with self._round():
            self.chat_history.append(ChatMessage.user(query))
            completion = await self.get_model_completion(include_functions=False, **hyperparams)
            self.chat_history.append(completion.message)
            return completion.message

    async def full_round(self, query: str, **hyperparams) -> AsyncIterator[RoundEvent]:
        """Send one user message and run function calls until the model answers in text.

        Yields an :class:`AssistantMessage` for every function request, a
        :class:`FunctionResult` for the recorded answer to it, and finally one
        :class:`FinalMessage`. After ``max_function_rounds`` calls, or once the
        exception handler declines a retry, functions are hidden from the model
        for the rest of the round so that it must reply in text.
        """
        with self._round():
            self.chat_history.append(ChatMessage.user(query))
            calls = 0
            failures = 0
            functions_enabled = len(self.functions) > 0
            while True:
                offer = functions_enabled and calls < self.max_function_rounds
                completion = await self.get_model_completion(include_functions=offer, **hyperparams)
                message = completion.message
                self.chat_history.append(message)
                if message.function_call is None or not offer:
                    yield FinalMessage(message)
                    return
                yield AssistantMessage(message)
                calls += 1
                try:
                    result = await self.do_function_call(message.function_call)
                except CallError as err:
                    mark = len(self.chat_history)
                    retry = await self.handle_function_call_exception(message.function_call, err, failures)
                    failures += 1
                    if not retry:
                        functions_enabled = False
                    feedback = self.chat_history[mark:]
                    if len(feedback) == 1:
                        yield FunctionResult(feedback[0], error=err)
                    continue
                self.chat_history.append(result)
                yield FunctionResult(result)

    async def full_round_str(self, query: str, **hyperparams) -> str:
        """Run a full round and return only the final reply's content."""
        final = None
        async for event in self.full_round(query, **hyperparams):
            if isinstance(event, FinalMessage):
                final = event.message
        return final.content

    # ==== function calling hooks ====
    async def do_function_call(self, call: FunctionCall) -> ChatMessage:
        """Run ``call`` and wrap its result in a FUNCTION message.

        Raises :class:`CallError` when the call is invalid or the handler fails.
        """
        text = await self.functions.invoke(call)
        return ChatMessage.function(call.name, text)

    async def handle_function_call_exception(self, call: FunctionCall, err: CallError, attempt: int) -> bool:
        """Record feedback for a failed call and return whether the model may retry.

        A handler failure is reported as the function's own output; every
        other error kind comes back as a system message.
        """
        if err.kind is CallErrorKind.WRAPPED_CALL:
            msg = ChatMessage.function(call.name, f"The call encountered an error: {err.detail}")
        else:
            msg = ChatMessage.system(f"Function call {call.name!r} failed: {err.detail}")
        self.chat_history.append(msg)
        return attempt < self.retry_attempts

    # ==== sub-agents and persistence ====
    def spawn(
        self,
        engine: BaseEngine | None = None,
        chat_history: Sequence[ChatMessage] | None = None,
        agent_cls: type[Agent] | None = None,
        **kwargs,
    ) -> Agent:
        """Create an independent agent, by default a plain :class:`Agent` on the same engine.

        The child gets copies of the persistent messages and of ``chat_history``
        (the whole parent history if omitted); nothing mutable is shared.
        """
        kwargs.setdefault("system_prompt", self.system_prompt)
        if "always_included_messages" not in kwargs:
            persistent = self.always_included_messages
            if self.system_prompt is not None:
                persistent = persistent[1:]
            kwargs["always_included_messages"] = list(persistent)
        history = list(self.chat_history if chat_history is None else chat_history)
        return (agent_cls or Agent)(engine or self.engine, chat_history=history, **kwargs)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(dumps_transcript(self.chat_history).encode("utf-8"))

    def load(self, path: str | Path) -> None:
        if self._in_round:
            raise RoundInProgress("cannot load a transcript during a round")
        self.chat_history = loads_transcript(Path(path).read_bytes())

    async def close(self) -> None:
        await self.engine.close()


async def collect(events: AsyncIterator[RoundEvent]) -> list[RoundEvent]:
    return [e async for e in events]

