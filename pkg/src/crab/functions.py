"""Callable functions exposed to the model.

Functions are described by a small type vocabulary (string, integer, number,
boolean, enum, list, optional). Model-supplied arguments are checked against
that description before any handler runs, so handlers only ever see
well-typed values.
"""

from __future__ import annotations

import asyncio
import enum
import inspect
import json
import math
import types
import typing
from dataclasses import dataclass, field
from typing import Annotated, Any, Callable, Iterable, Union

from .exceptions import CallError, CallErrorKind
from .messages import FunctionCall

__all__ = [
    "AIFunction",
    "AIParam",
    "FunctionRegistry",
    "ParamKind",
    "ParamSpec",
    "ParamType",
    "ai_function",
    "schema_of",
    "stringify_result",
]


class ParamKind(enum.Enum):
    STRING = "string"
    INTEGER = "integer"
    NUMBER = "number"
    BOOLEAN = "boolean"
    ENUM = "enum"
    LIST = "list"
    OPTIONAL = "optional"


@dataclass(frozen=True)
class ParamType:
    kind: ParamKind
    variants: tuple[str, ...] = ()
    inner: ParamType | None = None
    # the Python enum class to coerce ENUM values into, if any
    enum_cls: type[enum.Enum] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind is ParamKind.ENUM:
            if not self.variants:
                raise ValueError("an enum parameter needs at least one variant")
            if len(set(self.variants)) != len(self.variants):
                raise ValueError(f"enum variants must be distinct: {self.variants}")
            if not all(isinstance(v, str) for v in self.variants):
                raise ValueError("enum variants must be strings")
        if self.kind in (ParamKind.LIST, ParamKind.OPTIONAL):
            if self.inner is None:
                raise ValueError(f"{self.kind.value} needs an inner type")
        if self.kind is ParamKind.OPTIONAL and self.inner.kind is ParamKind.OPTIONAL:
            raise ValueError("optional cannot wrap optional")

    @classmethod
    def string(cls):
        return cls(ParamKind.STRING)

    @classmethod
    def integer(cls):
        return cls(ParamKind.INTEGER)

    @classmethod
    def number(cls):
        return cls(ParamKind.NUMBER)

    @classmethod
    def boolean(cls):
        return cls(ParamKind.BOOLEAN)

    @classmethod
    def enum(cls, variants: Iterable[str], enum_cls: type[enum.Enum] | None = None):
        return cls(ParamKind.ENUM, variants=tuple(variants), enum_cls=enum_cls)

    @classmethod
    def list_of(cls, element: ParamType):
        return cls(ParamKind.LIST, inner=element)

    @classmethod
    def optional(cls, inner: ParamType):
        if inner.kind is ParamKind.OPTIONAL:
            return inner
        return cls(ParamKind.OPTIONAL, inner=inner)

    @classmethod
    def from_annotation(cls, annotation: Any) -> ParamType:
        """Translate a Python type annotation into the parameter vocabulary."""
        origin = typing.get_origin(annotation)
        if origin is Annotated:
            return cls.from_annotation(typing.get_args(annotation)[0])
        if origin is Union or (hasattr(types, "UnionType") and origin is types.UnionType):
            members = [a for a in typing.get_args(annotation) if a is not type(None)]
            if len(members) != 1 or len(members) == len(typing.get_args(annotation)):
                raise TypeError(f"only Optional[T] unions are supported, got {annotation!r}")
            return cls.optional(cls.from_annotation(members[0]))
        if origin in (list, typing.List):
            (element,) = typing.get_args(annotation) or (None,)
            if element is None:
                raise TypeError("list parameters need an element type, e.g. list[str]")
            return cls.list_of(cls.from_annotation(element))
        if annotation is bool:
            return cls.boolean()
        if annotation is int:
            return cls.integer()
        if annotation is float:
            return cls.number()
        if annotation is str:
            return cls.string()
        if isinstance(annotation, type) and issubclass(annotation, enum.Enum):
            return cls.enum([str(m.value) for m in annotation], enum_cls=annotation)
        raise TypeError(f"unsupported parameter type {annotation!r}")

    def json_schema(self) -> dict[str, Any]:
        kind = self.kind
        if kind is ParamKind.OPTIONAL:
            return self.inner.json_schema()
        if kind is ParamKind.ENUM:
            return {"type": "string", "enum": list(self.variants)}
        if kind is ParamKind.LIST:
            return {"type": "array", "items": self.inner.json_schema()}
        return {"type": kind.value}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: ParamType
    description: str | None = None
    required: bool = True
    # default handed to the handler when an optional parameter is omitted
    default: Any = field(default=None, compare=False)

    def __post_init__(self):
        if self.required == (self.type.kind is ParamKind.OPTIONAL):
            raise ValueError(f"parameter {self.name!r}: required must be false exactly when the type is optional")


@dataclass(frozen=True)
class AIParam:
    """Extra documentation for a parameter, attached via ``Annotated[T, AIParam(desc=...)]``."""

    desc: str | None = None


def _params_from_signature(fn: Callable) -> list[ParamSpec]:
    hints = typing.get_type_hints(fn, include_extras=True)
    params = []
    for p in inspect.signature(fn).parameters.values():
        if p.kind in (p.VAR_POSITIONAL, p.VAR_KEYWORD):
            raise TypeError(f"{fn.__name__}: *args/**kwargs cannot be exposed to a model")
        if p.name not in hints:
            raise TypeError(f"{fn.__name__}: parameter {p.name!r} has no type annotation")
        hint = hints[p.name]
        desc = None
        if typing.get_origin(hint) is Annotated:
            desc = next((a.desc for a in typing.get_args(hint)[1:] if isinstance(a, AIParam)), None)
        ptype = ParamType.from_annotation(hint)
        has_default = p.default is not p.empty
        if has_default:
            ptype = ParamType.optional(ptype)
        required = ptype.kind is not ParamKind.OPTIONAL
        params.append(ParamSpec(p.name, ptype, desc, required, p.default if has_default else None))
    return params


class AIFunction:
    """A function the model may call.

    Built either from a documented, annotated Python callable (the usual path)
    or from an explicit list of :class:`ParamSpec`.
    """

    def __init__(
        self,
        handler: Callable,
        name: str | None = None,
        desc: str | None = None,
        params: list[ParamSpec] | None = None,
        timeout: float | None = None,
    ):
        self.handler = handler
        self.name = name or handler.__name__
        self.description = desc if desc is not None else (inspect.getdoc(handler) or "")
        self.params = list(params) if params is not None else _params_from_signature(handler)
        self.timeout = timeout
        if not self.name or not self.name.isidentifier():
            raise ValueError(f"function name must be an identifier, got {self.name!r}")
        if not self.description.strip():
            raise ValueError(f"function {self.name!r} must be documented")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"function {self.name!r} has duplicate parameter names")

    def __repr__(self):
        return f"AIFunction({self.name!r})"

    def __eq__(self, other):
        if not isinstance(other, AIFunction):
            return NotImplemented
        return (self.name, self.description, self.params) == (other.name, other.description, other.params)

    __hash__ = None

    @property
    def is_async(self) -> bool:
        return inspect.iscoroutinefunction(self.handler)

    def json_schema(self) -> dict[str, Any]:
        properties = {}
        for p in self.params:
            prop = p.type.json_schema()
            if p.description:
                prop["description"] = p.description
            properties[p.name] = prop
        return {
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": properties,
                "required": [p.name for p in self.params if p.required],
            },
        }

    def validate_arguments(self, arguments: str) -> dict[str, Any]:
        """Parse and type-check raw JSON arguments.

        Raises :class:`CallError` with kind UNKNOWN_PARAM when the object has
        keys that are not parameters, and VALIDATION for malformed JSON,
        missing required values, or values of the wrong type. Unknown keys are
        checked before any value.
        """
        try:
            data = json.loads(arguments, parse_constant=_reject_constant)
        except (ValueError, TypeError, RecursionError) as e:
            raise CallError(CallErrorKind.VALIDATION, f"arguments are not valid JSON: {e}", self.name) from None
        if not isinstance(data, dict):
            raise CallError(CallErrorKind.VALIDATION, "arguments must be a JSON object", self.name)
        known = {p.name for p in self.params}
        unknown = [k for k in data if k not in known]
        if unknown:
            raise CallError(
                CallErrorKind.UNKNOWN_PARAM,
                f"{self.name}() got unexpected parameter(s): {', '.join(map(repr, unknown))}",
                self.name,
            )
        out = {}
        for p in self.params:
            if p.name not in data:
                if p.required:
                    raise CallError(CallErrorKind.VALIDATION, f"missing required parameter {p.name!r}", self.name)
                continue
            try:
                out[p.name] = _coerce(p.type, data[p.name])
            except _Mismatch as e:
                raise CallError(CallErrorKind.VALIDATION, f"parameter {p.name!r}: {e}", self.name) from None
        return out

    def _handler_kwargs(self, validated: dict[str, Any]) -> dict[str, Any]:
        kwargs = dict(validated)
        for p in self.params:
            if not p.required and kwargs.get(p.name) is None:
                kwargs[p.name] = p.default
        return kwargs

    async def __call__(self, validated: dict[str, Any]) -> Any:
        kwargs = self._handler_kwargs(validated)
        if self.is_async:
            coro = self.handler(**kwargs)
        elif self.timeout is not None:
            coro = asyncio.to_thread(self.handler, **kwargs)
        else:
            return self.handler(**kwargs)
        if self.timeout is None:
            return await coro
        return await asyncio.wait_for(coro, self.timeout)


def _reject_constant(name):
    raise ValueError(f"{name} is not valid JSON")


class _Mismatch(Exception):
    pass


def _coerce(ptype: ParamType, value: Any) -> Any:
    kind = ptype.kind
    if kind is ParamKind.OPTIONAL:
        return None if value is None else _coerce(ptype.inner, value)
    if kind is ParamKind.STRING:
        if isinstance(value, str):
            return value
    elif kind is ParamKind.BOOLEAN:
        if isinstance(value, bool):
            return value
    elif kind is ParamKind.INTEGER:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and math.isfinite(value) and value.is_integer():
            return int(value)
    elif kind is ParamKind.NUMBER:
        if isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value):
            return value
    elif kind is ParamKind.ENUM:
        if isinstance(value, str) and value in ptype.variants:
            if ptype.enum_cls is not None:
                return next(m for m in ptype.enum_cls if str(m.value) == value)
            return value
        raise _Mismatch(f"expected one of {list(ptype.variants)}, got {value!r}")
    elif kind is ParamKind.LIST:
        if isinstance(value, list):
            return [_coerce(ptype.inner, v) for v in value]
    raise _Mismatch(f"expected {ptype.json_schema()['type']}, got {type(value).__name__} {_short(value)}")


def _short(value: Any) -> str:
    text = json.dumps(value)
    return text if len(text) <= 40 else text[:37] + "..."


def schema_of(fn: AIFunction) -> str:
    """Deterministic JSON text describing ``fn`` in the chat-completions function format."""
    return json.dumps(fn.json_schema(), ensure_ascii=False, separators=(",", ":"))


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, enum.Enum):
        return value.value
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def stringify_result(result: Any) -> str:
    """Render a handler's return value as message text; non-strings become canonical JSON."""
    if isinstance(result, str):
        return result
    try:
        return json.dumps(result, ensure_ascii=False, sort_keys=True, separators=(",", ":"), default=_to_jsonable)
    except (TypeError, ValueError):
        return str(result)


def ai_function(func: Callable | None = None, *, name: str | None = None, desc: str | None = None,
                timeout: float | None = None):
    """Mark an agent method as callable by the model.

    Usable bare (``@ai_function``) or with options (``@ai_function(name=...)``).
    The method's docstring becomes the function description.
    """

    def deco(f):
        f.__ai_function__ = {"name": name, "desc": desc, "timeout": timeout}
        return f

    if func is not None:
        return deco(func)
    return deco


class FunctionRegistry:
    """Name-indexed set of :class:`AIFunction`; lookup is exact and case-sensitive."""

    def __init__(self, functions: Iterable[AIFunction] = ()):
        self.functions: dict[str, AIFunction] = {}
        for fn in functions:
            self.register(fn)

    def register(self, fn: AIFunction) -> FunctionRegistry:
        self.functions[fn.name] = fn
        return self

    def __len__(self):
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions.values())

    def __contains__(self, name):
        return name in self.functions

    def __getitem__(self, name) -> AIFunction:
        return self.functions[name]

    def get(self, name) -> AIFunction | None:
        return self.functions.get(name)

    def validate_call(self, call: FunctionCall) -> dict[str, Any]:
        """Return the coerced arguments for ``call`` or raise :class:`CallError`.

        Never raises anything else, whatever the model produced.
        """
        fn = self.functions.get(call.name)
        if fn is None:
            raise CallError(CallErrorKind.NO_SUCH_FUNCTION, f"function {call.name!r} does not exist", call.name)
        return fn.validate_arguments(call.arguments)

    async def invoke(self, call: FunctionCall) -> str:
        """Validate ``call``, run its handler and return the result as text."""
        args = self.validate_call(call)
        fn = self.functions[call.name]
        try:
            result = await fn(args)
        except asyncio.TimeoutError:
            raise CallError(CallErrorKind.WRAPPED_CALL, f"{call.name} timed out after {fn.timeout}s", call.name)
        except Exception as e:
            raise CallError(CallErrorKind.WRAPPED_CALL, str(e) or type(e).__name__, call.name) from e
        return stringify_result(result)
