"""Chat message model and transcript persistence."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import IO, Any, Iterable

from .exceptions import FormatError, InvalidMessage

TRANSCRIPT_VERSION = 1


class ChatRole(enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    FUNCTION = "function"


@dataclass(frozen=True)
class FunctionCall:
    """A model's request to run a named function.

    ``arguments`` is the raw JSON text exactly as the engine produced it; it
    is not parsed or checked here.
    """

    name: str
    arguments: str

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise InvalidMessage("function call name must be a non-empty string")
        if not isinstance(self.arguments, str):
            raise InvalidMessage("function call arguments must be raw JSON text")

    @classmethod
    def with_args(cls, name: str, **kwargs: Any) -> FunctionCall:
        return cls(name, json.dumps(kwargs))


@dataclass(frozen=True)
class ChatMessage:
    """One turn of a conversation.

    Only assistant messages may carry a ``function_call``. Function messages
    must be named after the function that produced them; user messages may
    carry a name for multi-user chats; no other role takes a name.
    """

    role: ChatRole
    content: str
    name: str | None = None
    function_call: FunctionCall | None = None

    def __post_init__(self):
        if not isinstance(self.role, ChatRole):
            raise InvalidMessage(f"unknown role {self.role!r}")
        if not isinstance(self.content, str):
            raise InvalidMessage("content must be text")
        if self.function_call is not None:
            if self.role is not ChatRole.ASSISTANT:
                raise InvalidMessage(f"a {self.role.value} message cannot carry a function_call")
            if not isinstance(self.function_call, FunctionCall):
                raise InvalidMessage("function_call must be a FunctionCall")
        if self.role is ChatRole.FUNCTION:
            if not self.name:
                raise InvalidMessage("function messages must name the function that produced them")
        elif self.role is not ChatRole.USER and self.name is not None:
            raise InvalidMessage(f"a {self.role.value} message cannot carry a name")
        if self.name is not None and not isinstance(self.name, str):
            raise InvalidMessage("name must be text")

    @classmethod
    def system(cls, content: str) -> ChatMessage:
        return cls(ChatRole.SYSTEM, content)

    @classmethod
    def user(cls, content: str, name: str | None = None) -> ChatMessage:
        return cls(ChatRole.USER, content, name=name)

    @classmethod
    def assistant(cls, content: str, function_call: FunctionCall | None = None) -> ChatMessage:
        return cls(ChatRole.ASSISTANT, content, function_call=function_call)

    @classmethod
    def function(cls, name: str, content: str) -> ChatMessage:
        return cls(ChatRole.FUNCTION, content, name=name)

    def to_dict(self) -> dict[str, Any]:
        call = self.function_call
        return {
            "role": self.role.value,
            "content": self.content,
            "name": self.name,
            "function_call": None if call is None else {"name": call.name, "arguments": call.arguments},
        }

    @classmethod
    def from_dict(cls, data: Any) -> ChatMessage:
        """Parse one serialized message; unknown keys are ignored."""
        if not isinstance(data, dict):
            raise FormatError("message must be a JSON object")
        try:
            role = ChatRole(data.get("role"))
        except ValueError:
            raise FormatError(f"unknown role {data.get('role')!r}") from None
        content = data.get("content")
        if not isinstance(content, str):
            raise FormatError("message content must be a string")
        call = data.get("function_call")
        if call is not None:
            if not isinstance(call, dict):
                raise FormatError("function_call must be an object")
            call = _parse_call(call)
        try:
            return cls(role, content, name=data.get("name"), function_call=call)
        except InvalidMessage as e:
            raise FormatError(str(e)) from e


def _parse_call(data: dict) -> FunctionCall:
    try:
        return FunctionCall(data.get("name"), data.get("arguments"))
    except InvalidMessage as e:
        raise FormatError(str(e)) from e


def make_message(
    role: ChatRole, content: str, name: str | None = None, function_call: FunctionCall | None = None
) -> ChatMessage:
    return ChatMessage(role, content, name=name, function_call=function_call)


def dumps_transcript(messages: Iterable[ChatMessage]) -> str:
    doc = {"version": TRANSCRIPT_VERSION, "messages": [m.to_dict() for m in messages]}
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":"))


def loads_transcript(text: str | bytes) -> list[ChatMessage]:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"transcript is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise FormatError("transcript must be a JSON object")
    if doc.get("version") != TRANSCRIPT_VERSION or isinstance(doc.get("version"), bool):
        raise FormatError(f"unsupported transcript version {doc.get('version')!r}")
    messages = doc.get("messages")
    if not isinstance(messages, list):
        raise FormatError("transcript messages must be a list")
    return [ChatMessage.from_dict(m) for m in messages]


def save_transcript(messages: Iterable[ChatMessage], sink: IO[bytes]) -> None:
    """Write ``messages`` to a binary stream as UTF-8 JSON.

    The output is deterministic: equal transcripts produce identical bytes.
    """
    sink.write(dumps_transcript(messages).encode("utf-8"))


def load_transcript(source: IO[bytes]) -> list[ChatMessage]:
    return loads_transcript(source.read())
