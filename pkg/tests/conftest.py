import pytest

from crab import AIFunction
from crab.demo import get_weather
from helpers import StubServer


@pytest.fixture
def anyio_backend():
    return "asyncio"


@pytest.fixture
def weather_fn():
    return AIFunction(get_weather)


@pytest.fixture
def stub_server():
    with StubServer() as stub:
        yield stub
