from .base import BaseEngine, ClosableEngine, Completion
from .http import HttpEngine
from .llama import LlamaEngine, MockTokenizer, TokenizerAdapter
from .scripted import Call, Say, ScriptedEngine

__all__ = [
    "BaseEngine",
    "Call",
    "ClosableEngine",
    "Completion",
    "HttpEngine",
    "LlamaEngine",
    "MockTokenizer",
    "Say",
    "ScriptedEngine",
    "TokenizerAdapter",
]
