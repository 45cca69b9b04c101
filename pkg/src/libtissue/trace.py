"""Tagged-antigen tracing for turnover checks.

When a tracer is attached, each copy written to the tissue is a distinct
``TracedAntigen`` object, so its fate can be followed by identity while
it still compares and hashes as the plain syscall number.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


class TracedAntigen(int):
    pass


@dataclass
class Fate:
    value: int
    born: int
    displayed_at: Optional[int] = None
    died: Optional[int] = None
    cause: Optional[str] = None


class AntigenTracer:
    def __init__(self) -> None:
        self.fates: dict[int, Fate] = {}
        self._tokens: list[TracedAntigen] = []  # pins ids for the tracer's lifetime

    def copy(self, value: int, tick: int) -> TracedAntigen:
        token = TracedAntigen(value)
        self._tokens.append(token)
        self.fates[id(token)] = Fate(int(value), tick)
        return token

    def displayed(self, token, tick: int) -> None:
        fate = self.fates[id(token)]
        if fate.displayed_at is not None or fate.died is not None:
            raise AssertionError(f"antigen {fate} displayed twice or after destruction")
        fate.displayed_at = tick

    def destroyed(self, token, cause: str, tick: int) -> None:
        fate = self.fates[id(token)]
        if fate.died is not None:
            raise AssertionError(f"antigen {fate} destroyed twice")
        fate.died = tick
        fate.cause = cause

    def survivors(self) -> list[Fate]:
        return [f for f in self.fates.values() if f.died is None]
