"""Deterministic engine that replays a fixed script of replies.

Used as a test double: it measures messages with a whitespace word count and
asserts on the prompts it receives.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from ..exceptions import FormatError, PromptAssertionFailed, ScriptExhausted
from ..functions import AIFunction
from ..messages import ChatMessage, FunctionCall
from .base import ClosableEngine, Completion

PromptCheck = Callable[[Sequence[ChatMessage]], Any]

TOKENS_PER_FUNCTION = 8


@dataclass(frozen=True)
class Say:
    text: str
    expect: PromptCheck | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    arguments: str = "{}"
    content: str = ""
    expect: PromptCheck | None = field(default=None, compare=False)

    @classmethod
    def with_args(cls, name: str, **kwargs) -> Call:
        return cls(name, json.dumps(kwargs))


ScriptStep = Say | Call


@dataclass
class Received:
    messages: list[ChatMessage]
    functions: list[AIFunction]
    hyperparams: dict[str, Any]


def word_count(text: str) -> int:
    return len(text.split())


class ScriptedEngine(ClosableEngine):
    """Replays ``script`` one step per :meth:`predict` call.

    A :class:`Call` step is only played when the caller offers at least one
    function; with an empty function list (as when the agent hides functions)
    pending call steps are skipped up to the next :class:`Say`, the way a real
    model cannot call a tool it was never shown. Set
    ``skip_calls_without_functions=False`` to play calls regardless.

    Every predict is recorded in :attr:`received`.
    """

    def __init__(
        self,
        script: Sequence[ScriptStep] = (),
        max_context_size: int = 4096,
        skip_calls_without_functions: bool = True,
    ):
        self.script = list(script)
        self.max_context_size = max_context_size
        self.skip_calls_without_functions = skip_calls_without_functions
        self.received: list[Received] = []
        self.skipped: list[Call] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> ScriptedEngine:
        return cls(load_script(path), **kwargs)

    @property
    def remaining(self) -> int:
        return len(self.script)

    def message_len(self, message: ChatMessage) -> int:
        return word_count(self._render_message(message))

    def function_token_reserve(self, functions: Sequence[AIFunction]) -> int:
        return TOKENS_PER_FUNCTION * len(functions)

    @staticmethod
    def _render_message(message: ChatMessage) -> str:
        # one role tag token, then content words, then the call if any
        line = f"{message.role.value}: {message.content}"
        if message.function_call is not None:
            line += f" {message.function_call.name} {message.function_call.arguments}"
        return line

    def render_prompt(self, messages: Sequence[ChatMessage], functions: Sequence[AIFunction] = ()) -> str:
        """The textual prompt this engine would send to a real model."""
        lines = [f"function: {f.name}" for f in functions]
        lines += [self._render_message(m) for m in messages]
        return "\n".join(lines)

    def _next_step(self, functions: Sequence[AIFunction]) -> ScriptStep:
        with self._lock:
            while self.script:
                step = self.script.pop(0)
                if isinstance(step, Call) and not functions and self.skip_calls_without_functions:
                    self.skipped.append(step)
                    continue
                return step
        raise ScriptExhausted(f"script exhausted after {len(self.received)} prediction(s)")

    async def predict(self, messages, functions=None, **hyperparams) -> Completion:
        self._check_open()
        messages = list(messages)
        functions = list(functions or [])
        with self._lock:
            self.received.append(Received(messages, functions, dict(hyperparams)))
        step = self._next_step(functions)
        if step.expect is not None:
            try:
                ok = step.expect(messages)
            except AssertionError as e:
                raise PromptAssertionFailed(f"prompt check failed: {e}") from e
            if ok is False:
                raise PromptAssertionFailed(f"prompt check failed for step {step!r}")
        if isinstance(step, Say):
            message = ChatMessage.assistant(step.text)
        else:
            message = ChatMessage.assistant(step.content, FunctionCall(step.name, step.arguments))
        prompt_tokens = sum(self.message_len(m) for m in messages) + self.function_token_reserve(functions)
        return Completion(message, prompt_tokens=prompt_tokens, completion_tokens=self.message_len(message))


def parse_script(data: Any) -> list[ScriptStep]:
    """Build steps from JSON data: ``[{"say": "..."}, {"call": "name", "arguments": {...}}]``.

    ``arguments`` may be an object (encoded with json.dumps) or a raw string
    that is passed through untouched, malformed or not.
    """
    if not isinstance(data, list):
        raise FormatError("a script must be a JSON list of steps")
    steps = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise FormatError(f"step {i} must be an object")
        if "say" in item and isinstance(item["say"], str):
            steps.append(Say(item["say"]))
        elif "call" in item and isinstance(item["call"], str) and item["call"]:
            args = item.get("arguments", {})
            if not isinstance(args, str):
                args = json.dumps(args)
            steps.append(Call(item["call"], args, item.get("content", "")))
        else:
            raise FormatError(f"step {i} needs a 'say' string or a 'call' name")
    return steps


def load_script(path: str | Path) -> list[ScriptStep]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: {e}") from e
    return parse_script(data)
