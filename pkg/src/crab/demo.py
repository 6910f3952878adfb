"""Small functions used by the examples and the scripted demos."""

from __future__ import annotations

import datetime
import enum
from typing import Annotated

from .agent import Agent
from .functions import AIFunction, AIParam, ai_function


class Unit(enum.Enum):
    FAHRENHEIT = "fahrenheit"
    CELSIUS = "celsius"


def get_weather(loc: Annotated[str, AIParam(desc="The desired city")], unit: Unit):
    """Get the weather in a given location."""
    return "72" if unit is Unit.FAHRENHEIT else "22"


def get_date_and_time():
    """Get the current day and time."""
    return str(datetime.datetime.now())


class WeatherAgent(Agent):
    @ai_function
    def get_weather(self, loc: Annotated[str, AIParam(desc="The desired city")], unit: Unit):
        """Get the weather in a given location."""
        return get_weather(loc, unit)


functions = [AIFunction(get_weather)]
