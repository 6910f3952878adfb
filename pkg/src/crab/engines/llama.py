"""LLaMA-2 chat template with exact token accounting.

Each message is rendered with its role's wrapper::

    user       <s>[INST] {content} [/INST]
    assistant   {content} </s>
    other      <s>[INST] <<SYS>>\\n{content}\\n<</SYS>>\\n\\n [/INST]

and :meth:`LlamaEngine.message_len` charges exactly the wrapper cost for its
role (7, 2 and 20 tokens with the default tokenizer), so the summed message
lengths of a conversation equal the length of the built prompt.

Real subword tokenizers sit behind :class:`TokenizerAdapter`; the bundled
:class:`MockTokenizer` counts whitespace-separated words and gives each
special marker a configured cost, which is enough to exercise the arithmetic
without downloading a model.
"""

from __future__ import annotations

import asyncio
import inspect
import re
import threading
from typing import Any, Callable, Protocol, Sequence

from ..exceptions import EngineError
from ..messages import ChatMessage, ChatRole
from .base import ClosableEngine, Completion

BOS, EOS = "<s>", "</s>"
B_INST, E_INST = "[INST]", "[/INST]"
B_SYS, E_SYS = "<<SYS>>\n", "\n<</SYS>>\n\n"


class TokenizerAdapter(Protocol):
    bos_id: int
    eos_id: int
    # wrapper overheads charged by message_len, per role
    user_overhead: int
    assistant_overhead: int
    system_overhead: int

    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...


DEFAULT_SPECIAL_COSTS = {
    BOS: 1,
    EOS: 2,
    B_INST: 3,
    E_INST: 3,
    "<<SYS>>": 6,
    "<</SYS>>": 7,
}


class MockTokenizer:
    """Whitespace-word tokenizer with costed special markers.

    Every whitespace-separated word is one token. Each special marker
    (``<s>``, ``</s>``, ``[INST]``, ``[/INST]``, ``<<SYS>>``, ``<</SYS>>``)
    expands to ``cost`` ids, the last of which is the marker's own id; for
    ``<s>`` and ``</s>`` that is :attr:`bos_id` / :attr:`eos_id`. The default
    costs make the three role wrappers cost 7, 2 and 20 tokens.
    """

    bos_id = 1
    eos_id = 2

    def __init__(self, special_costs: dict[str, int] | None = None):
        self.special_costs = dict(DEFAULT_SPECIAL_COSTS if special_costs is None else special_costs)
        if any(c < 1 for c in self.special_costs.values()):
            raise ValueError("special marker costs must be at least 1")
        self._special_ids = {BOS: self.bos_id, EOS: self.eos_id}
        for s in self.special_costs:
            self._special_ids.setdefault(s, 10 + len(self._special_ids))
        self._filler_id = 3
        # longest first so "<</SYS>>" wins over any shorter overlapping marker
        pattern = "|".join(re.escape(s) for s in sorted(self.special_costs, key=len, reverse=True))
        self._split = re.compile(f"({pattern})")
        self._vocab: dict[str, int] = {}
        self._words: dict[int, str] = {}
        self._lock = threading.Lock()

    def _wrapper_cost(self, *markers: str) -> int:
        return sum(self.special_costs[m] for m in markers)

    @property
    def user_overhead(self) -> int:
        return self._wrapper_cost(BOS, B_INST, E_INST)

    @property
    def assistant_overhead(self) -> int:
        return self._wrapper_cost(EOS)

    @property
    def system_overhead(self) -> int:
        return self._wrapper_cost(BOS, B_INST, "<<SYS>>", "<</SYS>>", E_INST)

    def _word_id(self, word: str) -> int:
        with self._lock:
            wid = self._vocab.get(word)
            if wid is None:
                wid = self._vocab[word] = 1000 + len(self._vocab)
                self._words[wid] = word
            return wid

    def encode(self, text: str) -> list[int]:
        ids = []
        for piece in self._split.split(text):
            if piece in self.special_costs:
                ids.extend([self._filler_id] * (self.special_costs[piece] - 1))
                ids.append(self._special_ids[piece])
            else:
                ids.extend(self._word_id(w) for w in piece.split())
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        by_id = {v: k for k, v in self._special_ids.items()}
        out = []
        for i in ids:
            if i in self._words:
                out.append(self._words[i])
            elif i in by_id:
                out.append(by_id[i])
        return " ".join(out)


def render_message(message: ChatMessage) -> str:
    if message.role is ChatRole.USER:
        return f"{BOS}{B_INST} {message.content} {E_INST}"
    if message.role is ChatRole.ASSISTANT:
        return f" {message.content} {EOS}"
    return f"{BOS}{B_INST} {B_SYS}{message.content}{E_SYS} {E_INST}"


def build_prompt(tok: TokenizerAdapter, messages: Sequence[ChatMessage], collapse_system_turn: bool = False) -> list[int]:
    """Token ids of the LLaMA-2 chat prompt for ``messages``.

    Messages are grouped into rounds closed by each assistant reply; a trailing
    unanswered round (usually the new user message) is emitted without an
    end-of-sequence marker. With ``collapse_system_turn`` the
    ``[/INST]<s>[INST]`` seam between a system message and the following
    user message is removed, merging both into one instruction block. That is
    the canonical LLaMA-2 layout but it makes the prompt 7 tokens shorter than
    the summed per-message accounting, so it is off by default.
    """
    seam = f" {E_INST}{BOS}{B_INST} "
    ids: list[int] = []
    buf: list[str] = []

    def flush():
        text = "".join(buf)
        if collapse_system_turn:
            text = text.replace(seam, "")
        ids.extend(tok.encode(text))
        buf.clear()

    for message in messages:
        buf.append(render_message(message))
        if message.role is ChatRole.ASSISTANT:
            flush()
    if buf:
        flush()
    return ids


def message_len(tok: TokenizerAdapter, message: ChatMessage) -> int:
    if message.role is ChatRole.USER:
        return len(tok.encode(message.content)) + tok.user_overhead
    if message.role is ChatRole.ASSISTANT:
        return len(tok.encode(f" {message.content} ")) + tok.assistant_overhead
    return len(tok.encode(message.content)) + tok.system_overhead


# backend(input_ids, **hyperparams) -> full output ids (input followed by the generation)
GenerateFn = Callable[..., Any]


class LlamaEngine(ClosableEngine):
    """Engine for LLaMA-2 chat models driven by a token-level ``backend``.

    ``backend`` receives the prompt ids and returns the whole output sequence
    (prompt, generated ids, stop id), as HuggingFace ``generate`` does. It may
    be sync or async. ``single_stream`` serializes calls into a synchronous
    backend that cannot run concurrently.
    """

    def __init__(
        self,
        backend: GenerateFn,
        tokenizer: TokenizerAdapter | None = None,
        max_context_size: int = 4096,
        collapse_system_turn: bool = False,
        single_stream: bool = True,
        **hyperparams,
    ):
        self.backend = backend
        self.tokenizer = tokenizer if tokenizer is not None else MockTokenizer()
        self.max_context_size = max_context_size
        self.collapse_system_turn = collapse_system_turn
        self.single_stream = single_stream
        self.hyperparams = hyperparams
        self._stream_lock = threading.Lock()

    def build_prompt(self, messages: Sequence[ChatMessage], functions=None) -> list[int]:
        return build_prompt(self.tokenizer, messages, self.collapse_system_turn)

    def message_len(self, message: ChatMessage) -> int:
        return message_len(self.tokenizer, message)

    def _generate_sync(self, input_ids: list[int], hyperparams: dict) -> Sequence[int]:
        if not self.single_stream:
            return self.backend(input_ids, **hyperparams)
        with self._stream_lock:
            return self.backend(input_ids, **hyperparams)

    async def _generate(self, input_ids: list[int], hyperparams: dict) -> Sequence[int]:
        if inspect.iscoroutinefunction(self.backend):
            # async backends manage their own concurrency
            return await self.backend(input_ids, **hyperparams)
        return await asyncio.to_thread(self._generate_sync, input_ids, hyperparams)

    async def predict(self, messages, functions=None, **hyperparams) -> Completion:
        self._check_open()
        input_ids = self.build_prompt(messages, functions)
        input_len = len(input_ids)
        hyperparams = {**self.hyperparams, **hyperparams}
        try:
            output = await self._generate(input_ids, hyperparams)
        except EngineError:
            raise
        except Exception as e:
            raise EngineError(f"generation failed: {e}") from e
        generated = list(output[input_len:])
        # the completion excludes the prompt and the stop token
        if generated and generated[-1] == self.tokenizer.eos_id:
            generated = generated[:-1]
        content = self.tokenizer.decode(generated).strip()
        return Completion(ChatMessage.assistant(content), prompt_tokens=input_len, completion_tokens=len(generated))


def parrot_backend(tok: TokenizerAdapter) -> GenerateFn:
    """Toy backend that answers with the words of the last instruction block."""

    def generate(input_ids, **_):
        text = tok.decode(input_ids)
        last = text.rsplit(B_INST, 1)[-1].split(E_INST, 1)[0]
        last = last.replace("<<SYS>>", "").replace("<</SYS>>", "")
        return list(input_ids) + tok.encode(last) + [tok.eos_id]

    return generate
