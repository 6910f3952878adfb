"""WebSocket chat service: one agent per connection, one engine shared by all."""

from __future__ import annotations

import argparse
import asyncio
import contextlib
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import uvicorn
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .agent import Agent
from .cli import ConfigError, build_engine, load_functions, render_event
from .engines.base import BaseEngine

log = logging.getLogger(__name__)

CLOSE_IDLE = 1000
CLOSE_INTERNAL_ERROR = 1011
CLOSE_TRY_AGAIN_LATER = 1013


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    engine: str | None = None
    script: Path | None = None
    mode: str = "chat"
    system_prompt: str | None = None
    functions: str | None = None
    max_connections: int = 64
    idle_timeout: float = 300.0
    shutdown_deadline: float = 10.0


def create_app(
    engine: BaseEngine | None = None,
    *,
    engine_factory: Callable[[], BaseEngine] | None = None,
    agent_factory: Callable[[BaseEngine], Agent] | None = None,
    mode: str = "chat",
    max_connections: int = 64,
    idle_timeout: float | None = 300.0,
) -> FastAPI:
    """Build the ASGI app serving ``/chat``.

    Pass a shared ``engine``, or an ``engine_factory`` to give each connection
    its own engine (closed when the connection ends). Every text frame is one
    user message and gets exactly one reply frame. In ``full`` mode function
    calls run and the reply joins the rendered round events with newlines.
    """
    if (engine is None) == (engine_factory is None):
        raise ValueError("pass exactly one of engine or engine_factory")
    agent_factory = agent_factory or Agent
    active = 0

    @contextlib.asynccontextmanager
    async def lifespan(app):
        yield
        if engine is not None:
            await engine.close()

    app = FastAPI(lifespan=lifespan)

    async def reply_to(agent: Agent, text: str) -> str:
        if mode == "chat":
            return (await agent.chat_round(text)).content
        lines = []
        async for event in agent.full_round(text):
            lines.extend(render_event(event))
        return "\n".join(lines)

    @app.websocket("/chat")
    async def chat(websocket: WebSocket):
        nonlocal active
        if active >= max_connections:
            # accept first so the client sees the close code rather than a bare HTTP 403
            await websocket.accept()
            await websocket.close(code=CLOSE_TRY_AGAIN_LATER, reason="too many connections")
            return
        active += 1
        own_engine = engine_factory() if engine_factory is not None else None
        try:
            await websocket.accept()
            agent = agent_factory(own_engine or engine)
            while True:
                try:
                    text = await asyncio.wait_for(websocket.receive_text(), idle_timeout)
                except asyncio.TimeoutError:
                    await websocket.close(code=CLOSE_IDLE, reason="idle timeout")
                    return
                await websocket.send_text(await reply_to(agent, text))
        except WebSocketDisconnect:
            pass
        except Exception as e:
            log.exception("connection failed")
            with contextlib.suppress(Exception):
                await websocket.close(code=CLOSE_INTERNAL_ERROR, reason=type(e).__name__)
        finally:
            active -= 1
            if own_engine is not None:
                await own_engine.close()

    return app


def serve(cfg: ServiceConfig) -> None:
    """Run the service until interrupted; in-flight rounds get ``shutdown_deadline`` seconds to finish."""
    engine = build_engine(cfg.engine or ("scripted" if cfg.script else "http"), cfg.script)
    functions = load_functions(cfg.functions) if cfg.functions else []

    def agent_factory(e: BaseEngine) -> Agent:
        return Agent(e, system_prompt=cfg.system_prompt, functions=functions)

    app = create_app(
        engine, agent_factory=agent_factory, mode=cfg.mode,
        max_connections=cfg.max_connections, idle_timeout=cfg.idle_timeout,
    )
    config = uvicorn.Config(app, host=cfg.host, port=cfg.port, timeout_graceful_shutdown=cfg.shutdown_deadline)
    uvicorn.Server(config).run()


def parse_bind(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {value!r}") from None


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="crab-serve", description="Host agents over WebSocket at /chat.")
    parser.add_argument("--bind", type=parse_bind, default=("127.0.0.1", 8000), help="HOST:PORT (default 127.0.0.1:8000)")
    parser.add_argument("--engine", help="http | llama-mock | scripted:FILE")
    parser.add_argument("--script", type=Path)
    parser.add_argument("--mode", choices=["chat", "full"], default="chat")
    parser.add_argument("--system", dest="system_prompt")
    parser.add_argument("--functions", help="MODULE:ATTR naming a list of functions to expose")
    parser.add_argument("--max-connections", type=int, default=64)
    parser.add_argument("--idle-timeout", type=float, default=300.0)
    args = parser.parse_args(argv)
    host, port = args.bind
    cfg = ServiceConfig(
        host=host, port=port, engine=args.engine, script=args.script, mode=args.mode,
        system_prompt=args.system_prompt, functions=args.functions,
        max_connections=args.max_connections, idle_timeout=args.idle_timeout,
    )
    try:
        serve(cfg)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
