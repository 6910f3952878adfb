"""Engine for OpenAI-compatible ``/chat/completions`` HTTP APIs."""

from __future__ import annotations

import asyncio
import json
import logging
import math
import random
from typing import Any, Callable, Sequence

import httpx

from ..exceptions import EngineError, FormatError
from ..functions import AIFunction
from ..messages import ChatMessage, ChatRole, FunctionCall
from .base import ClosableEngine, Completion

log = logging.getLogger(__name__)

RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})
PER_MESSAGE_OVERHEAD = 5


def estimate_tokens(message: ChatMessage) -> int:
    """Rough provider-agnostic count: four characters per token plus a fixed wrapper cost."""
    text = message.content
    if message.function_call is not None:
        text += message.function_call.name + message.function_call.arguments
    return math.ceil(len(text) / 4) + PER_MESSAGE_OVERHEAD


def message_to_wire(message: ChatMessage) -> dict[str, Any]:
    out: dict[str, Any] = {"role": message.role.value, "content": message.content}
    if message.name is not None:
        out["name"] = message.name
    if message.function_call is not None:
        out["function_call"] = {"name": message.function_call.name, "arguments": message.function_call.arguments}
    return out


def message_from_wire(data: Any) -> ChatMessage:
    if not isinstance(data, dict):
        raise FormatError("choice message is not an object")
    content = data.get("content")
    if content is None:
        content = ""
    if not isinstance(content, str):
        raise FormatError("choice message content is not a string")
    call = data.get("function_call")
    if call is not None:
        if not isinstance(call, dict) or not isinstance(call.get("name"), str) or not call.get("name"):
            raise FormatError("malformed function_call in response")
        arguments = call.get("arguments", "")
        if not isinstance(arguments, str):
            raise FormatError("function_call arguments must be a string")
        call = FunctionCall(call["name"], arguments)
    return ChatMessage(ChatRole.ASSISTANT, content, function_call=call)


class HttpEngine(ClosableEngine):
    """Chat-completions client sharing one connection pool across concurrent predictions.

    Responses with status 429 or 5xx are retried up to ``max_retries_transport``
    times with jittered exponential backoff; any other non-2xx status fails
    immediately. The API key is sent as a bearer token and scrubbed from every
    error message.
    """

    def __init__(
        self,
        api_key: str,
        model: str = "gpt-4",
        base_url: str = "https://api.openai.com/v1",
        max_context_size: int = 8192,
        request_timeout: float = 600.0,
        max_retries_transport: int = 2,
        backoff_base: float = 0.5,
        token_counter: Callable[[ChatMessage], int] | None = None,
        client: httpx.AsyncClient | None = None,
        **hyperparams,
    ):
        self.api_key = api_key
        self.model = model
        self.base_url = base_url.rstrip("/")
        self.max_context_size = max_context_size
        self.request_timeout = request_timeout
        self.max_retries_transport = max_retries_transport
        self.backoff_base = backoff_base
        self.token_counter = token_counter or estimate_tokens
        self.hyperparams = hyperparams
        self._client = client

    def __repr__(self):
        return f"HttpEngine(model={self.model!r}, base_url={self.base_url!r})"

    @property
    def client(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient(timeout=self.request_timeout)
        return self._client

    def message_len(self, message: ChatMessage) -> int:
        return self.token_counter(message)

    def build_request(
        self, messages: Sequence[ChatMessage], functions: Sequence[AIFunction] | None = None, **hyperparams
    ) -> dict[str, Any]:
        body: dict[str, Any] = {"model": self.model, "messages": [message_to_wire(m) for m in messages]}
        if functions:
            body["functions"] = [f.json_schema() for f in functions]
        body.update({**self.hyperparams, **hyperparams})
        return body

    def _redact(self, text: str) -> str:
        if self.api_key:
            text = text.replace(self.api_key, "[redacted]")
        return text

    def _backoff(self, attempt: int) -> float:
        return self.backoff_base * (2**attempt) * (0.5 + random.random() / 2)

    async def _post(self, body: dict[str, Any]) -> httpx.Response:
        url = f"{self.base_url}/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}"}
        attempt = 0
        while True:
            self._check_open()
            try:
                resp = await self.client.post(url, json=body, headers=headers)
            except httpx.HTTPError as e:
                raise EngineError(self._redact(f"request to {url} failed: {type(e).__name__}: {e}")) from None
            if resp.is_success:
                return resp
            if resp.status_code in RETRY_STATUSES and attempt < self.max_retries_transport:
                delay = self._backoff(attempt)
                log.warning("HTTP %s from %s, retrying in %.2fs", resp.status_code, url, delay)
                await asyncio.sleep(delay)
                attempt += 1
                continue
            raise EngineError(self._redact(f"HTTP {resp.status_code} from {url}: {resp.text[:500]}"))

    async def predict(self, messages, functions=None, **hyperparams) -> Completion:
        self._check_open()
        body = self.build_request(messages, functions, **hyperparams)
        resp = await self._post(body)
        try:
            data = resp.json()
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise FormatError(f"response body is not JSON: {e}") from None
        return parse_response(data)

    async def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._client is not None:
            await self._client.aclose()


def parse_response(data: Any) -> Completion:
    """Turn a chat-completions response body into a :class:`Completion` (choice 0 only)."""
    if not isinstance(data, dict):
        raise FormatError("response body is not a JSON object")
    try:
        choice = data["choices"][0]
        message = message_from_wire(choice["message"])
    except (KeyError, IndexError, TypeError) as e:
        raise FormatError(f"unexpected response shape: {e!r}") from None
    usage = data.get("usage") or {}
    try:
        prompt_tokens = int(usage.get("prompt_tokens") or 0)
        completion_tokens = int(usage.get("completion_tokens") or 0)
    except (TypeError, ValueError, AttributeError):
        raise FormatError("malformed usage block") from None
    return Completion(message, prompt_tokens=max(prompt_tokens, 0), completion_tokens=max(completion_tokens, 0))
