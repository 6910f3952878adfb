"""crab: a small, model-agnostic framework for chat applications with function calling."""

from .agent import Agent, AssistantMessage, FinalMessage, FunctionResult, RoundEvent, collect
from .cli import chat_in_terminal, chat_in_terminal_async
from .engines.base import BaseEngine, Completion
from .exceptions import (
    CallError,
    CallErrorKind,
    ContextOverflow,
    CrabException,
    EngineError,
    FormatError,
    InvalidMessage,
    RoundInProgress,
    ScriptExhausted,
)
from .functions import AIFunction, AIParam, FunctionRegistry, ParamSpec, ParamType, ai_function, schema_of
from .messages import ChatMessage, ChatRole, FunctionCall, load_transcript, make_message, save_transcript

__all__ = [
    "AIFunction",
    "AIParam",
    "Agent",
    "AssistantMessage",
    "BaseEngine",
    "CallError",
    "CallErrorKind",
    "ChatMessage",
    "ChatRole",
    "Completion",
    "ContextOverflow",
    "CrabException",
    "EngineError",
    "FinalMessage",
    "FormatError",
    "FunctionCall",
    "FunctionRegistry",
    "FunctionResult",
    "InvalidMessage",
    "ParamSpec",
    "ParamType",
    "RoundEvent",
    "RoundInProgress",
    "ScriptExhausted",
    "ai_function",
    "chat_in_terminal",
    "chat_in_terminal_async",
    "collect",
    "load_transcript",
    "make_message",
    "save_transcript",
    "schema_of",
]
