import io

import pytest
from hypothesis import given
from hypothesis import strategies as st

from crab import ChatMessage, ChatRole, FormatError, FunctionCall, InvalidMessage, make_message
from crab.messages import dumps_transcript, load_transcript, loads_transcript, save_transcript

text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=40)
names = st.from_regex(r"[a-z_]{1,12}", fullmatch=True)
calls = st.builds(FunctionCall, names, text)

messages = st.one_of(
    st.builds(ChatMessage.system, text),
    st.builds(ChatMessage.user, text, st.none() | text),
    st.builds(ChatMessage.assistant, text, st.none() | calls),
    st.builds(ChatMessage.function, names, text),
)


def test_make_user_message():
    m = make_message(ChatRole.USER, "Hello there!")
    assert m.role is ChatRole.USER
    assert m.content == "Hello there!"
    assert m.name is None and m.function_call is None


def test_make_function_message():
    m = make_message(ChatRole.FUNCTION, "72F", "get_weather")
    assert m.name == "get_weather"


def test_messages_are_immutable():
    m = ChatMessage.user("hi")
    with pytest.raises(AttributeError):
        m.content = "changed"


@pytest.mark.parametrize(
    "role,name,call",
    [
        (ChatRole.USER, None, FunctionCall("f", "{}")),
        (ChatRole.SYSTEM, None, FunctionCall("f", "{}")),
        (ChatRole.FUNCTION, "f", FunctionCall("f", "{}")),
        (ChatRole.FUNCTION, None, None),
        (ChatRole.SYSTEM, "bob", None),
        (ChatRole.ASSISTANT, "bob", None),
    ],
)
def test_invalid_combinations(role, name, call):
    with pytest.raises(InvalidMessage):
        make_message(role, "x", name, call)


def test_function_call_needs_name():
    with pytest.raises(InvalidMessage):
        FunctionCall("", "{}")


def test_function_call_keeps_malformed_arguments():
    assert FunctionCall("f", '{"loc": 5').arguments == '{"loc": 5'


def test_user_may_carry_name():
    assert ChatMessage.user("hi", name="alice").name == "alice"


def test_any_role_anywhere_in_history():
    history = [ChatMessage.user("a"), ChatMessage.system("b"), ChatMessage.assistant("c")]
    assert loads_transcript(dumps_transcript(history)) == history


def test_save_single_message():
    buf = io.BytesIO()
    save_transcript([ChatMessage.user("hi")], buf)
    assert buf.getvalue() == b'{"version":1,"messages":[{"role":"user","content":"hi","name":null,"function_call":null}]}'


def test_save_empty():
    buf = io.BytesIO()
    save_transcript([], buf)
    assert buf.getvalue() == b'{"version":1,"messages":[]}'


def test_save_hello_transcript_keeps_order():
    history = [ChatMessage.user("Hello there!"), ChatMessage.assistant("Hello! How can I help?")]
    buf = io.BytesIO()
    save_transcript(history, buf)
    assert buf.getvalue() == (
        b'{"version":1,"messages":['
        b'{"role":"user","content":"Hello there!","name":null,"function_call":null},'
        b'{"role":"assistant","content":"Hello! How can I help?","name":null,"function_call":null}]}'
    )


def test_function_call_serialized_with_raw_arguments():
    m = ChatMessage.assistant("", FunctionCall("get_weather", '{"loc":"SF"}'))
    assert dumps_transcript([m]) == (
        '{"version":1,"messages":[{"role":"assistant","content":"",'
        '"name":null,"function_call":{"name":"get_weather","arguments":"{\\"loc\\":\\"SF\\"}"}}]}'
    )


def test_non_ascii_written_as_utf8():
    buf = io.BytesIO()
    save_transcript([ChatMessage.assistant("カニ")], buf)
    assert "カニ".encode() in buf.getvalue()


def test_load_rejects_unknown_version():
    with pytest.raises(FormatError):
        loads_transcript('{"version":7,"messages":[]}')


def test_load_rejects_unknown_role():
    with pytest.raises(FormatError):
        loads_transcript('{"version":1,"messages":[{"role":"oracle","content":""}]}')


@pytest.mark.parametrize(
    "doc",
    [
        "not json",
        "[]",
        '{"messages":[]}',
        '{"version":1}',
        '{"version":1,"messages":[{"role":"user"}]}',
        '{"version":1,"messages":[{"role":"function","content":"x"}]}',
        '{"version":1,"messages":[{"role":"user","content":"x","function_call":{"name":"f","arguments":"{}"}}]}',
        '{"version":1,"messages":[{"role":"assistant","content":"x","function_call":{"name":"","arguments":"{}"}}]}',
        '{"version":1,"messages":["hi"]}',
    ],
)
def test_load_rejects_malformed(doc):
    with pytest.raises(FormatError):
        loads_transcript(doc)


def test_load_ignores_unknown_keys():
    doc = '{"version":1,"extra":true,"messages":[{"role":"user","content":"x","mood":"happy"}]}'
    assert loads_transcript(doc) == [ChatMessage.user("x")]


@given(st.lists(messages, max_size=8))
def test_round_trip(history):
    buf = io.BytesIO()
    save_transcript(history, buf)
    buf.seek(0)
    assert load_transcript(buf) == history


@given(st.lists(messages, max_size=8))
def test_saves_are_deterministic(history):
    copy = [ChatMessage(m.role, m.content, m.name, m.function_call) for m in history]
    assert dumps_transcript(history).encode() == dumps_transcript(copy).encode()
