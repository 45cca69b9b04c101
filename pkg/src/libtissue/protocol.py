"""Line-oriented wire format between tissue clients and the server.

    H <role>              handshake: antigen | signal | response
    A <u32>               antigen
    S <index> <level>     absolute signal level
    R <tick> <u32>        response record
    E <text>              error report
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from .model import U32_MAX

ROLES = ("antigen", "signal", "response")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Hello:
    role: str


@dataclass(frozen=True)
class AntigenMsg:
    value: int


@dataclass(frozen=True)
class SignalMsg:
    index: int
    level: float


@dataclass(frozen=True)
class ResponseMsg:
    tick: int
    value: int


@dataclass(frozen=True)
class ErrorMsg:
    text: str


WireMessage = Union[Hello, AntigenMsg, SignalMsg, ResponseMsg, ErrorMsg]


def _check_text(text: str) -> None:
    if not text.isprintable() or text != text.strip() or not text.isascii():
        raise ProtocolError(f"error text must be printable ASCII without edge spaces: {text!r}")


def encode_message(msg: WireMessage) -> bytes:
    if isinstance(msg, AntigenMsg):
        if not 0 <= msg.value <= U32_MAX:
            raise ProtocolError(f"antigen {msg.value} outside u32")
        line = f"A {msg.value}"
    elif isinstance(msg, SignalMsg):
        if msg.index < 0 or not math.isfinite(msg.level):
            raise ProtocolError(f"bad signal {msg}")
        line = f"S {msg.index} {float(msg.level)!r}"
    elif isinstance(msg, ResponseMsg):
        if msg.tick < 0 or not 0 <= msg.value <= U32_MAX:
            raise ProtocolError(f"bad response {msg}")
        line = f"R {msg.tick} {msg.value}"
    elif isinstance(msg, Hello):
        if msg.role not in ROLES:
            raise ProtocolError(f"unknown role {msg.role!r}")
        line = f"H {msg.role}"
    elif isinstance(msg, ErrorMsg):
        _check_text(msg.text)
        line = f"E {msg.text}" if msg.text else "E"
    else:
        raise TypeError(f"not a wire message: {msg!r}")
    return (line + "\n").encode("ascii")


def _uint(token: str, limit: int | None = None) -> int:
    if not token.isdigit() or not token.isascii():
        raise ProtocolError(f"not an unsigned integer: {token!r}")
    value = int(token)
    if limit is not None and value > limit:
        raise ProtocolError(f"{value} exceeds {limit}")
    return value


def decode_message(line: bytes | str) -> WireMessage:
    if isinstance(line, bytes):
        try:
            line = line.decode("ascii")
        except UnicodeDecodeError:
            raise ProtocolError("non-ASCII bytes in line") from None
    if line.endswith("\n"):
        line = line[:-1]
    if line.endswith("\r"):
        line = line[:-1]
    if not line:
        raise ProtocolError("empty line")
    kind, rest = line[0], line[1:]
    if kind == "E":
        if rest and not rest.startswith(" "):
            raise ProtocolError(f"malformed error line {line!r}")
        text = rest[1:]
        _check_text(text)
        return ErrorMsg(text)
    if not rest.startswith(" "):
        raise ProtocolError(f"malformed line {line!r}")
    parts = rest[1:].split(" ")
    if kind == "A" and len(parts) == 1:
        return AntigenMsg(_uint(parts[0], U32_MAX))
    if kind == "S" and len(parts) == 2:
        index = _uint(parts[0])
        try:
            level = float(parts[1])
        except ValueError:
            raise ProtocolError(f"non-numeric level {parts[1]!r}") from None
        if not math.isfinite(level):
            raise ProtocolError("non-finite signal level")
        return SignalMsg(index, level)
    if kind == "R" and len(parts) == 2:
        return ResponseMsg(_uint(parts[0]), _uint(parts[1], U32_MAX))
    if kind == "H" and len(parts) == 1:
        if parts[0] not in ROLES:
            raise ProtocolError(f"unknown role {parts[0]!r}")
        return Hello(parts[0])
    raise ProtocolError(f"malformed line {line!r}")
