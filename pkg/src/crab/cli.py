"""Terminal chat loop and the ``crab`` command."""

from __future__ import annotations

import argparse
import asyncio
import importlib
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

from .agent import Agent, AssistantMessage, FinalMessage, RoundEvent
from .engines.base import BaseEngine
from .exceptions import CrabException, EngineError, FormatError
from .functions import AIFunction

DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-4"


def render_event(event: RoundEvent) -> list[str]:
    """Lines printed for one round event."""
    if isinstance(event, FinalMessage):
        return [f"AI: {event.message.content}"]
    if isinstance(event, AssistantMessage) and event.message.function_call is not None:
        lines = [f"AI: {event.message.content}"] if event.message.content else []
        lines.append(f"AI: Thinking ({event.message.function_call.name})...")
        return lines
    return []


async def chat_in_terminal_async(
    agent: Agent,
    rounds: int | None = None,
    mode: str = "full",
    stdin: TextIO | None = None,
    stdout: TextIO | None = None,
    stderr: TextIO | None = None,
) -> None:
    """Chat with ``agent`` on the terminal until EOF or ``rounds`` user turns.

    When input is not a terminal, each line read is echoed after the prompt so
    the output reads as a complete transcript.
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    echo = not (hasattr(stdin, "isatty") and stdin.isatty())
    done = 0
    while rounds is None or done < rounds:
        stdout.write("USER: ")
        stdout.flush()
        line = await asyncio.to_thread(stdin.readline)
        if not line:
            stdout.write("\n")
            break
        query = line.rstrip("\r\n")
        if echo:
            stdout.write(query + "\n")
        done += 1
        try:
            if mode == "chat":
                reply = await agent.chat_round(query)
                stdout.write(f"AI: {reply.content}\n")
            else:
                async for event in agent.full_round(query):
                    for out in render_event(event):
                        stdout.write(out + "\n")
                        stdout.flush()
        except (EngineError, FormatError) as e:
            stderr.write(f"error: {e}\n")
        stdout.flush()


def chat_in_terminal(agent: Agent, rounds: int | None = None, mode: str = "full", **kwargs) -> None:
    """Synchronous wrapper around :func:`chat_in_terminal_async`."""
    asyncio.run(chat_in_terminal_async(agent, rounds=rounds, mode=mode, **kwargs))


@dataclass
class ReplOptions:
    engine: str | None = None
    mode: str = "full"
    rounds: int | None = None
    system_prompt: str | None = None
    transcript_out: Path | None = None
    script: Path | None = None
    functions: str | None = None


class ConfigError(CrabException):
    pass


def build_engine(spec: str, script: Path | None = None) -> BaseEngine:
    """Construct an engine from a selector: ``http``, ``llama-mock`` or ``scripted[:FILE]``."""
    if spec == "http":
        from .engines.http import HttpEngine

        api_key = os.environ.get("CRAB_API_KEY")
        if not api_key:
            raise ConfigError("the http engine needs an API key in CRAB_API_KEY")
        return HttpEngine(
            api_key,
            model=os.environ.get("CRAB_MODEL", DEFAULT_MODEL),
            base_url=os.environ.get("CRAB_BASE_URL", DEFAULT_BASE_URL),
        )
    if spec == "llama-mock":
        from .engines.llama import LlamaEngine, MockTokenizer, parrot_backend

        tok = MockTokenizer()
        return LlamaEngine(parrot_backend(tok), tokenizer=tok)
    if spec == "scripted" or spec.startswith("scripted:"):
        from .engines.scripted import ScriptedEngine

        path = spec.partition(":")[2] or script
        if not path:
            raise ConfigError("the scripted engine needs a script file (scripted:FILE or --script FILE)")
        try:
            return ScriptedEngine.from_file(path)
        except (OSError, FormatError) as e:
            raise ConfigError(f"cannot load script: {e}") from e
    raise ConfigError(f"unknown engine {spec!r}")


def load_functions(target: str) -> list[AIFunction]:
    """Import ``module:attribute`` naming a list of AIFunctions or plain documented callables."""
    module_name, _, attr = target.partition(":")
    try:
        obj = getattr(importlib.import_module(module_name), attr or "functions")
    except (ImportError, AttributeError) as e:
        raise ConfigError(f"cannot import functions from {target!r}: {e}") from e
    items = obj() if callable(obj) and not isinstance(obj, AIFunction) else obj
    try:
        return [f if isinstance(f, AIFunction) else AIFunction(f) for f in items]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid function in {target!r}: {e}") from e


async def _run(opts: ReplOptions, stdin, stdout, stderr) -> int:
    selector = opts.engine or ("scripted" if opts.script else "http")
    try:
        engine = build_engine(selector, opts.script)
        functions = load_functions(opts.functions) if opts.functions else []
        agent = Agent(engine, system_prompt=opts.system_prompt, functions=functions)
    except (ConfigError, ValueError) as e:
        stderr.write(f"configuration error: {e}\n")
        return 2
    try:
        await chat_in_terminal_async(agent, rounds=opts.rounds, mode=opts.mode, stdin=stdin, stdout=stdout, stderr=stderr)
    finally:
        await engine.close()
    if opts.transcript_out is not None:
        agent.save(opts.transcript_out)
    return 0


def run_repl(opts: ReplOptions, stdin=None, stdout=None, stderr=None) -> int:
    return asyncio.run(_run(opts, stdin or sys.stdin, stdout or sys.stdout, stderr or sys.stderr))


def positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crab", description="Chat with a language model in the terminal.")
    parser.add_argument("--engine", help="http | llama-mock | scripted:FILE (default: http, or scripted with --script)")
    parser.add_argument("--mode", choices=["chat", "full"], default="full", help="full enables function calling")
    parser.add_argument("--rounds", type=positive_int, help="stop after this many user turns")
    parser.add_argument("--system", dest="system_prompt", help="system prompt")
    parser.add_argument("--save", dest="transcript_out", type=Path, help="write the transcript here on exit")
    parser.add_argument("--script", type=Path, help="script file for the scripted engine")
    parser.add_argument("--functions", help="MODULE:ATTR naming a list of functions to expose")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    return run_repl(ReplOptions(**vars(args)))


if __name__ == "__main__":
    sys.exit(main())
