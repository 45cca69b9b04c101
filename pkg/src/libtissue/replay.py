"""Recorded-log replay (``tcreplay``): log parsing, strace ingestion, paced sending.

Replay log format, one event per line::

    <offset_us> A <syscall>
    <offset_us> S <signal index> <level>

Lines starting with ``#`` are comments. Offsets must not decrease.
"""

from __future__ import annotations

import logging
import math
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .model import U32_MAX

log = logging.getLogger(__name__)


class ReplayParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class ReplayEvent:
    offset: int  # microseconds from session start
    kind: str  # "A" or "S"
    value: int  # syscall number, or signal index for "S"
    level: Optional[float] = None

    def item(self) -> tuple:
        if self.kind == "A":
            return ("A", self.value)
        return ("S", self.value, self.level)

    def format(self) -> str:
        if self.kind == "A":
            return f"{self.offset} A {self.value}"
        return f"{self.offset} S {self.value} {self.level!r}"


def parse_replay_line(line: str) -> Optional[ReplayEvent]:
    """Parse one log line; ``None`` for blanks and comments. Raises ValueError."""
    line = line.strip()
    if not line or line.startswith("#"):
        return None
    parts = line.split()
    if len(parts) < 3:
        raise ValueError(f"too few fields in {line!r}")
    offset = int(parts[0])
    if offset < 0:
        raise ValueError(f"negative offset {offset}")
    kind = parts[1]
    if kind == "A":
        if len(parts) != 3:
            raise ValueError(f"antigen line needs 3 fields: {line!r}")
        value = int(parts[2])
        if not 0 <= value <= U32_MAX:
            raise ValueError(f"antigen {value} outside u32 range")
        return ReplayEvent(offset, "A", value)
    if kind == "S":
        if len(parts) != 4:
            raise ValueError(f"signal line needs 4 fields: {line!r}")
        index = int(parts[2])
        level = float(parts[3])
        if index < 0 or not math.isfinite(level):
            raise ValueError(f"bad signal entry {line!r}")
        return ReplayEvent(offset, "S", index, level)
    raise ValueError(f"unknown event kind {kind!r}")


def parse_replay_log(path: str | Path) -> list[ReplayEvent]:
    events: list[ReplayEvent] = []
    last = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                ev = parse_replay_line(line)
            except ValueError as exc:
                raise ReplayParseError(path, lineno, str(exc)) from None
            if ev is None:
                continue
            if ev.offset < last:
                raise ReplayParseError(path, lineno, f"offset {ev.offset} decreases (previous {last})")
            last = ev.offset
            events.append(ev)
    return events


def format_replay_log(events: Iterable[ReplayEvent], header: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    lines.extend(ev.format() for ev in events)
    return "\n".join(lines) + ("\n" if lines else "")


def write_replay_log(path: str | Path, events: Iterable[ReplayEvent], header: Sequence[str] = ()) -> None:
    Path(path).write_text(format_replay_log(events, header))


def antigen_values(events: Iterable[ReplayEvent]) -> list[int]:
    return [ev.value for ev in events if ev.kind == "A"]


# -- syscall name table -----------------------------------------------------

def load_name_map(path: str | Path | None = None) -> dict[str, int]:
    """Read a ``name number`` table; defaults to the bundled syscall table."""
    if path is None:
        text = resources.files("libtissue").joinpath("data/syscalls.tbl").read_text()
    else:
        text = Path(path).read_text()
    table: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"name map line {lineno}: expected 'name number', got {line!r}")
        table[parts[0]] = int(parts[1])
    if not table:
        raise ValueError("empty syscall name map")
    return table


def number_names(name_map: dict[str, int]) -> dict[int, str]:
    out: dict[int, str] = {}
    for name, number in name_map.items():
        out.setdefault(number, name)
    return out


# -- strace ingestion -------------------------------------------------------

_STRACE_LINE = re.compile(
    r"""^(?:\[pid\s+\d+\]\s+|\d+\s+)?          # optional pid prefix
        (?P<ts>\d+(?::\d\d:\d\d)?(?:\.\d+)?\s+)?  # -r / -t / -tt / -ttt stamp
        (?P<name>[A-Za-z_][A-Za-z0-9_]*)\(
    """,
    re.X,
)


@dataclass
class StraceReport:
    parsed: int = 0
    skipped_names: Counter = field(default_factory=Counter)
    skipped_lines: int = 0  # resumptions, signals, exits, noise


def _stamp_seconds(ts: str) -> float:
    if ":" in ts:
        h, m, s = ts.split(":")
        return int(h) * 3600 + int(m) * 60 + float(s)
    return float(ts)


def parse_strace_log(
    path: str | Path,
    name_map: dict[str, int],
    *,
    gap_us: int = 1000,
    relative: Optional[bool] = None,
) -> tuple[list[ReplayEvent], StraceReport]:
    """Turn ``name(args) = ret`` strace lines into antigen events.

    Timestamps are used when present: ``relative=True`` treats them as
    ``-r`` deltas, otherwise as absolute stamps rebased to the first line.
    ``relative=None`` guesses deltas when stamps are small and unordered.
    Without stamps, events are spaced ``gap_us`` apart.
    """
    if not name_map:
        raise ValueError("empty syscall name map")
    text = Path(path).read_text()
    report = StraceReport()
    rows: list[tuple[Optional[float], int]] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if "resumed>" in line or line.lstrip().startswith(("---", "+++")):
            report.skipped_lines += 1
            continue
        m = _STRACE_LINE.match(line.strip())
        if m is None:
            report.skipped_lines += 1
            continue
        name = m.group("name")
        if name not in name_map:
            report.skipped_names[name] += 1
            continue
        ts = m.group("ts")
        rows.append((_stamp_seconds(ts.strip()) if ts else None, name_map[name]))
        report.parsed += 1
    stamps = [t for t, _ in rows if t is not None]
    events: list[ReplayEvent] = []
    if rows and len(stamps) == len(rows):
        if relative is None:
            relative = any(b < a for a, b in zip(stamps, stamps[1:])) or max(stamps) < 1.0
        if relative:
            acc = 0.0
            for t, num in rows:
                acc += t
                events.append(ReplayEvent(round(acc * 1e6), "A", num))
        else:
            base = stamps[0]
            last = 0
            for t, num in rows:
                off = max(last, round((t - base) * 1e6))
                events.append(ReplayEvent(off, "A", num))
                last = off
    else:
        events = [ReplayEvent(i * gap_us, "A", num) for i, (_, num) in enumerate(rows)]
    if report.skipped_names:
        log.info("strace: skipped unmapped syscalls %s", dict(report.skipped_names))
    return events, report


# -- paced replay -----------------------------------------------------------

class ReplayAborted(ConnectionError):
    def __init__(self, sent: int, cause: Exception):
        super().__init__(f"replay aborted after {sent} events: {cause}")
        self.sent = sent


def replay_events(events: Sequence[ReplayEvent], rate: float, antigen_conn, signal_conn=None) -> int:
    """Send events at ``offset / rate`` after start; ``rate=inf`` sends back-to-back.

    ``antigen_conn`` / ``signal_conn`` need ``send_antigen(value)`` and
    ``send_signal(index, level)``. Returns the number of events sent.
    """
    if not rate > 0:
        raise ValueError("replay rate must be positive")
    signal_conn = signal_conn or antigen_conn
    start = time.monotonic()
    sent = 0
    try:
        for ev in events:
            if math.isfinite(rate):
                delay = start + ev.offset / 1e6 / rate - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            if ev.kind == "A":
                antigen_conn.send_antigen(ev.value)
            else:
                signal_conn.send_signal(ev.value, ev.level)
            sent += 1
    except (OSError, ConnectionError) as exc:
        raise ReplayAborted(sent, exc) from exc
    return sent


def schedule_events(events: Iterable[ReplayEvent], rate: float, start_us: int = 0) -> list[tuple[int, tuple]]:
    """Virtual-time counterpart of ``replay_events`` for ``engine.run``."""
    if not rate > 0:
        raise ValueError("replay rate must be positive")
    out = []
    for ev in events:
        t = start_us if math.isinf(rate) else start_us + round(ev.offset / rate)
        out.append((t, ev.item()))
    return out
