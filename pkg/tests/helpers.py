import json
import threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from crab.engines.base import BaseEngine

FIXTURES = Path(__file__).parent / "fixtures"


class BudgetCheckingEngine(BaseEngine):
    """Wraps an engine and fails if a prompt ever exceeds the agent's token budget."""

    def __init__(self, inner, desired_response_tokens):
        self.inner = inner
        self.desired = desired_response_tokens
        self.max_context_size = inner.max_context_size
        self.prompts = []

    def message_len(self, message):
        return self.inner.message_len(message)

    def function_token_reserve(self, functions):
        return self.inner.function_token_reserve(functions)

    async def predict(self, messages, functions=None, **hyperparams):
        used = sum(self.message_len(m) for m in messages)
        reserve = self.function_token_reserve(functions or [])
        assert used + reserve + self.desired <= self.max_context_size, (used, reserve, self.desired)
        self.prompts.append(list(messages))
        return await self.inner.predict(messages, functions, **hyperparams)

    async def close(self):
        await self.inner.close()


class StubServer:
    """Local HTTP server replaying queued responses and recording requests."""

    def __init__(self):
        self.responses = deque()
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                stub.requests.append({"path": self.path, "headers": dict(self.headers), "body": json.loads(raw)})
                status, body = stub.responses.popleft() if stub.responses else (500, {"error": "no response queued"})
                data = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def enqueue(self, status, body):
        self.responses.append((status, body))

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def load_fixture(name):
    return json.loads((FIXTURES / "http" / f"{name}.json").read_text())


API_KEY = "sk-test-SECRET"
SUCCESS_CASES = ("hello", "function_call", "function_result")


def fixture_messages(case):
    from crab import ChatMessage

    return [ChatMessage.from_dict({"name": None, "function_call": None, **m}) for m in case["messages"]]


def make_http_engine(stub, **kwargs):
    from crab.engines.http import HttpEngine

    kwargs.setdefault("backoff_base", 0.001)
    return HttpEngine(API_KEY, model="gpt-4", base_url=stub.base_url, **kwargs)


async def check_success_fixture(stub, name):
    """Replay one recorded exchange; assert the request body and the parsed completion."""
    from crab import AIFunction, FunctionCall
    from crab.demo import get_weather

    case = load_fixture(name)
    known = {"get_weather": AIFunction(get_weather)}
    stub.enqueue(200, case["response"])
    engine = make_http_engine(stub)
    try:
        completion = await engine.predict(
            fixture_messages(case), [known[n] for n in case["functions"]], **case["hyperparams"]
        )
    finally:
        await engine.close()
    sent = stub.requests[-1]
    assert sent["path"] == "/v1/chat/completions", sent["path"]
    assert sent["headers"]["Authorization"] == f"Bearer {API_KEY}"
    assert sent["body"] == case["request"], sent["body"]
    expected = case["expected"]
    call = expected["function_call"]
    assert completion.message.content == expected["content"]
    assert completion.message.function_call == (FunctionCall(call["name"], call["arguments"]) if call else None)
    assert (completion.prompt_tokens, completion.completion_tokens) == (
        expected["prompt_tokens"],
        expected["completion_tokens"],
    )


async def check_unauthorized(stub):
    """401 fails at once with the status in the message and the key scrubbed."""
    from crab import ChatMessage, EngineError

    case = load_fixture("unauthorized")
    before = len(stub.requests)
    stub.enqueue(case["status"], case["response"])
    engine = make_http_engine(stub)
    try:
        await engine.predict([ChatMessage.user("hi")])
    except EngineError as e:
        text = str(e)
    else:
        raise AssertionError("401 did not raise EngineError")
    finally:
        await engine.close()
    assert "401" in text and API_KEY not in text, text
    assert len(stub.requests) - before == 1


async def check_retry_then_success(stub, name):
    """A 429 or 500 followed by a success is retried transparently."""
    from crab import ChatMessage

    case = load_fixture(name)
    before = len(stub.requests)
    stub.enqueue(case["status"], case["response"])
    stub.enqueue(200, load_fixture("hello")["response"])
    engine = make_http_engine(stub)
    try:
        completion = await engine.predict([ChatMessage.user("Hello there!")])
    finally:
        await engine.close()
    assert completion.message.content == "Hello!"
    assert len(stub.requests) - before == 2


async def check_retry_exhausted(stub, name):
    """Persistent 429/500 gives up after the configured retries."""
    from crab import ChatMessage, EngineError

    case = load_fixture(name)
    before = len(stub.requests)
    for _ in range(3):
        stub.enqueue(case["status"], case["response"])
    engine = make_http_engine(stub, max_retries_transport=2)
    try:
        await engine.predict([ChatMessage.user("hi")])
    except EngineError as e:
        assert str(case["status"]) in str(e)
    else:
        raise AssertionError("exhausted retries did not raise EngineError")
    finally:
        await engine.close()
    assert len(stub.requests) - before == 3


async def run_http_conformance(stub):
    for name in SUCCESS_CASES:
        await check_success_fixture(stub, name)
    await check_unauthorized(stub)
    for name in ("rate_limited", "server_error"):
        await check_retry_then_success(stub, name)
        await check_retry_exhausted(stub, name)


# ==== agent oracles ====
class FixedCostEngine(BaseEngine):
    """Engine whose message length is the number of words and whose function reserve is a constant."""

    def __init__(self, max_context_size, reserve=0):
        self.max_context_size = max_context_size
        self.reserve = reserve

    def message_len(self, message):
        return len(message.content.split())

    def function_token_reserve(self, functions):
        return self.reserve

    async def predict(self, messages, functions=None, **hyperparams):
        from crab import ChatMessage, Completion

        return Completion(ChatMessage.assistant("ok"))


def longest_fitting_suffix(lengths, budget):
    """Brute force: try every suffix from longest to shortest."""
    for k in range(len(lengths), -1, -1):
        if sum(lengths[len(lengths) - k:]) <= budget:
            return k
    return 0


def event_shape(events):
    from crab import AssistantMessage, FinalMessage, FunctionResult

    letters = {AssistantMessage: "A", FunctionResult: "R", FinalMessage: "F"}
    return "".join(letters[type(e)] for e in events)


ROUND_SHAPE = r"(AR?)*F"


def check_round_laws(agent, query, events, history_before):
    """Round shape, history/event consistency and the retry bound for one finished full round."""
    import re

    from crab import AssistantMessage, ChatMessage, FunctionResult

    shape = event_shape(events)
    assert re.fullmatch(ROUND_SHAPE, shape), shape
    for i, e in enumerate(events):
        if isinstance(e, FunctionResult):
            prev = events[i - 1]
            assert isinstance(prev, AssistantMessage) and prev.message.function_call is not None
    assert agent.chat_history[:len(history_before)] == history_before
    suffix = agent.chat_history[len(history_before):]
    assert suffix == [ChatMessage.user(query)] + [e.message for e in events], (suffix, events)
    failures = sum(1 for e in events if isinstance(e, FunctionResult) and e.error is not None)
    assert failures <= agent.retry_attempts + 1, (failures, agent.retry_attempts)


def track_calls_agent_cls():
    import collections
    import datetime

    from crab import Agent, CallError, ai_function

    class TrackCallsAgent(Agent):
        def __init__(self, *args, **kwargs):
            super().__init__(*args, **kwargs)
            self.successful_calls = collections.Counter()
            self.failed_calls = collections.Counter()

        async def do_function_call(self, call):
            try:
                res = await super().do_function_call(call)
                self.successful_calls[call.name] += 1
                return res
            except CallError:
                self.failed_calls[call.name] += 1
                raise

        @ai_function()
        def get_time(self):
            """Get the current time."""
            raise RuntimeError("The time API is offline")

        @ai_function()
        def get_date_and_time(self):
            """Get the current day and time."""
            return str(datetime.datetime.now())

    return TrackCallsAgent


def track_calls_script():
    from crab.engines.scripted import Call, Say

    return [Call("get_time"), Call("get_date_and_time"), Say("The current time is 22:42.")]


def weather_script():
    from crab.engines.scripted import Call, Say

    return [
        Call.with_args("get_weather", loc="San Francisco", unit="fahrenheit"),
        Say("It's currently 72F in San Francisco."),
    ]


def bad_then_good_script():
    from crab.engines.scripted import Call, Say

    return [
        Call.with_args("get_wether", loc="San Francisco", unit="fahrenheit"),
        Call.with_args("get_weather", loc="San Francisco", unit="fahrenheit"),
        Say("It's currently 72F in San Francisco."),
    ]


WEATHER_SCRIPT = FIXTURES / "scripts" / "weather.json"
WEATHER_QUERY = "What's the weather in San Francisco?"
WEATHER_GOLDEN = (
    "USER: What's the weather in San Francisco?\n"
    "AI: Thinking (get_weather)...\n"
    "AI: It's currently 72F in San Francisco.\n"
)

QUICKSTART = """\
from crab import Agent, chat_in_terminal
from crab.demo import functions
from crab.engines.scripted import ScriptedEngine
engine = ScriptedEngine.from_file({script!r})
chat_in_terminal(Agent(engine, functions=functions), rounds=1)
"""


def run_quickstart():
    """Run the five-statement program in a fresh interpreter; return (stdout bytes, returncode)."""
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-c", QUICKSTART.format(script=str(WEATHER_SCRIPT))],
        input=(WEATHER_QUERY + "\n").encode(),
        capture_output=True,
        timeout=60,
    )
    return proc.stdout, proc.returncode, proc.stderr


# ==== service ====
class HistoryEchoEngine(BaseEngine):
    """Replies with every user message in the prompt joined by '|', after a small random delay.

    The reply is a pure function of the prompt, so any history leaking between
    conversations shows up in the text.
    """

    max_context_size = 100_000

    def __init__(self, seed=0):
        import random

        self.rng = random.Random(seed)
        self.closed = False

    def message_len(self, message):
        return 1

    async def predict(self, messages, functions=None, **hyperparams):
        import asyncio

        from crab import ChatMessage, ChatRole, Completion

        await asyncio.sleep(self.rng.random() * 0.005)
        users = [m.content for m in messages if m.role is ChatRole.USER]
        return Completion(ChatMessage.assistant("|".join(users)))

    async def close(self):
        self.closed = True


class ServerThread:
    """Runs an ASGI app under uvicorn on an ephemeral port in a background thread."""

    def __init__(self, app):
        import socket

        import uvicorn

        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.port = self.sock.getsockname()[1]
        config = uvicorn.Config(app, log_level="warning", lifespan="on")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, kwargs={"sockets": [self.sock]}, daemon=True)

    @property
    def url(self):
        return f"ws://127.0.0.1:{self.port}/chat"

    def __enter__(self):
        import time

        self.thread.start()
        deadline = time.monotonic() + 10
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.01)
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(10)
        self.sock.close()


async def run_isolation_check(url, connections=8, frames=20):
    """Interleave frames over many connections; each must see exactly its own serial transcript."""
    import asyncio

    from websockets.asyncio.client import connect

    async def one(cid):
        frames_sent = []
        async with connect(url) as ws:
            for k in range(frames):
                text = f"c{cid}-f{k}"
                await ws.send(text)
                frames_sent.append(text)
                reply = await ws.recv()
                assert reply == "|".join(frames_sent), (cid, k, reply)
                await asyncio.sleep(0)
            # exactly one reply per frame: nothing else is pending
            try:
                extra = await asyncio.wait_for(ws.recv(), 0.05)
            except asyncio.TimeoutError:
                extra = None
            assert extra is None, extra
        return cid

    done = await asyncio.gather(*(one(c) for c in range(connections)))
    assert sorted(done) == list(range(connections))
