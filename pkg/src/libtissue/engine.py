"""Compartment simulation loop: ingestion, scheduler tick, run loop, probes."""

from __future__ import annotations

import csv
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, TextIO

from . import cells as cd
from .model import Antigen, Cell, TissueCompartment

log = logging.getLogger(__name__)

ProbeCallback = Callable[[TissueCompartment], Sequence[tuple[str, Any]]]


class CellCycleError(RuntimeError):
    """A cell cycle callback raised; the tick was aborted."""


@dataclass
class ProbeSample:
    tick: int
    wall_offset: int  # microseconds since run start
    fields: list[tuple[str, Any]] = field(default_factory=list)
    error: Optional[str] = None

    def get(self, name: str, default=None):
        for k, v in self.fields:
            if k == name:
                return v
        return default


def ingest_antigen(compartment: TissueCompartment, antigen: Antigen) -> None:
    """Write ``antigen_multiplier`` copies into random tissue slots, overwriting."""
    store = compartment.antigen_store
    n = len(store)
    rnd = compartment.rng.random
    tracer = compartment.tracer
    counters = compartment.counters
    counters.ingested += 1
    for _ in range(compartment.params.antigen_multiplier):
        copy = antigen if tracer is None else tracer.copy(antigen, compartment.tick_count)
        i = int(rnd() * n)
        old = store[i]
        if old is None:
            compartment.antigen_count += 1
        else:
            counters.overwritten_tissue += 1
            if tracer is not None:
                tracer.destroyed(old, "tissue_overwrite", compartment.tick_count)
        store[i] = copy
        counters.copies += 1


def set_tissue_signal(compartment: TissueCompartment, index: int, level: float) -> None:
    if not 0 <= index < len(compartment.signal_store):
        raise IndexError(f"signal index {index} outside store of {len(compartment.signal_store)}")
    compartment.signal_store[index] = float(level)


def drain_queue(compartment: TissueCompartment) -> int:
    items = compartment.queue.drain()
    alphabet = compartment.params.antigen_alphabet
    for item in items:
        if item[0] == "A":
            if 0 <= item[1] < alphabet:
                ingest_antigen(compartment, item[1])
            else:
                log.warning("dropping antigen %d outside alphabet %d", item[1], alphabet)
        else:
            try:
                set_tissue_signal(compartment, item[1], item[2])
            except IndexError as exc:
                log.warning("dropping signal: %s", exc)
    return len(items)


def receptor_phase(cell: Cell, compartment: TissueCompartment) -> None:
    if cell.antigen_receptors:
        cd.update_antigen_receptors(cell, compartment)
    if cell.cytokine_receptors:
        cd.update_cytokine_receptors(cell, compartment)
    if cell.cell_receptors:
        cd.update_cell_receptors(cell, compartment)


def tick(compartment: TissueCompartment) -> None:
    drain_queue(compartment)
    order = compartment.cells
    compartment.rng.shuffle(order)
    for cell in order:
        receptor_phase(cell, compartment)
    store = compartment.cell_store
    for cell in order:
        if store[cell.index] is not cell:
            continue
        callback = compartment.callbacks.get(cell.cell_type)
        if callback is None:
            continue
        try:
            callback(cell, compartment)
        except Exception as exc:
            raise CellCycleError(
                f"cell {cell.index} (type {cell.cell_type}) callback failed at tick "
                f"{compartment.tick_count}: {exc}"
            ) from exc
    for cell in order:
        if cell.antigen_producers and store[cell.index] is cell:
            cd.present_antigen(cell, compartment)
    for cell in order:
        if cell.cytokine_producers and store[cell.index] is cell:
            cd.emit_cytokine(cell, compartment)
    compartment.tick_count += 1


def sample_probe(
    compartment: TissueCompartment, probe: ProbeCallback, wall_offset: int
) -> ProbeSample:
    sample = ProbeSample(compartment.tick_count, wall_offset)
    try:
        sample.fields = list(probe(compartment))
    except Exception as exc:
        log.warning("probe callback failed at tick %d: %s", compartment.tick_count, exc)
        sample.error = f"{type(exc).__name__}: {exc}"
    return sample


class ProbeLog:
    """Append-only CSV writer: ``tick,wall_us,<field>...``.

    List-valued fields are written space-separated in one column.
    """

    def __init__(self, fh: TextIO):
        self._fh = fh
        self._writer = csv.writer(fh, lineterminator="\n")
        self._header: Optional[list[str]] = None

    def write(self, sample: ProbeSample) -> None:
        if sample.error is not None:
            return
        names = [k for k, _ in sample.fields]
        if self._header is None:
            self._header = names
            self._writer.writerow(["tick", "wall_us", *names])
        elif names != self._header:
            raise ValueError(f"probe fields changed: {names} != {self._header}")
        row: list[Any] = [sample.tick, sample.wall_offset]
        for _, v in sample.fields:
            if isinstance(v, (list, tuple)):
                row.append(" ".join(_fmt(x) for x in v))
            else:
                row.append(_fmt(v))
        self._writer.writerow(row)
        self._fh.flush()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def read_probe_log(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


Schedule = Sequence[tuple[int, tuple]]


def run(
    compartment: TissueCompartment,
    ticks: Optional[int] = None,
    *,
    mode: str = "virtual",
    seconds: Optional[float] = None,
    schedule: Optional[Schedule] = None,
    probe: Optional[ProbeCallback] = None,
    probe_log: Optional[ProbeLog] = None,
    stop: Optional[threading.Event] = None,
    after_tick: Optional[Callable[[TissueCompartment], None]] = None,
) -> list[ProbeSample]:
    """Run the scheduler for ``ticks`` ticks (or ``seconds`` of run time).

    Virtual mode advances time by ``cell_update_rate`` per tick without
    sleeping. ``schedule`` holds ``(time_us, item)`` pairs sorted by time;
    items are queued before the first tick whose start time reaches them.
    Realtime mode sleeps between ticks and stops on ``stop``.
    """
    if mode not in ("virtual", "realtime"):
        raise ValueError(f"unknown run mode {mode!r}")
    params = compartment.params
    tick_us = params.cell_update_rate
    if ticks is None:
        if seconds is None:
            if mode == "virtual":
                raise ValueError("virtual runs need ticks or seconds")
            ticks = -1  # until stopped
        else:
            ticks = round(seconds * 1_000_000 / tick_us)
    samples: list[ProbeSample] = []
    pending = list(schedule or ())
    cursor = 0
    start_tick = compartment.tick_count
    next_probe = params.probe_rate
    t0 = time.monotonic()
    done = 0
    while ticks < 0 or done < ticks:
        if stop is not None and stop.is_set():
            break
        if mode == "realtime":
            delay = t0 + done * tick_us / 1e6 - time.monotonic()
            if delay > 0:
                if stop is not None:
                    if stop.wait(delay):
                        break
                else:
                    time.sleep(delay)
        now_us = done * tick_us
        while cursor < len(pending) and pending[cursor][0] <= now_us:
            item = pending[cursor][1]
            if item[0] == "A":
                compartment.queue.put_antigen(item[1])
            else:
                compartment.queue.put_signal(item[1], item[2])
            cursor += 1
        tick(compartment)
        done += 1
        if after_tick is not None:
            after_tick(compartment)
        if probe is not None:
            if mode == "virtual":
                wall = (compartment.tick_count - start_tick) * tick_us
            else:
                wall = int((time.monotonic() - t0) * 1e6)
            while wall >= next_probe:
                sample = sample_probe(compartment, probe, wall)
                samples.append(sample)
                if probe_log is not None:
                    probe_log.write(sample)
                next_probe += params.probe_rate
    return samples


def compartment_state(compartment: TissueCompartment) -> tuple:
    """Hashable snapshot of all stores, for determinism checks."""
    cells = []
    for c in compartment.cell_store:
        if c is None:
            cells.append(None)
            continue
        cells.append((
            c.cell_type,
            tuple(c.antigen_store),
            tuple(r.level for r in c.cytokine_receptors),
            tuple(r.bound for r in c.cell_receptors),
            tuple((r.lock, r.matched) for r in c.vr_receptors),
            tuple((p.displayed, p.remaining, p.action_time) for p in c.antigen_producers),
            tuple(c.internal_cytokines),
            c.age_since_randomise,
        ))
    return (
        compartment.tick_count,
        tuple(compartment.antigen_store),
        tuple(compartment.signal_store),
        tuple(cells),
    )


def occupied_antigen(compartment: TissueCompartment) -> int:
    return sum(1 for a in compartment.antigen_store if a is not None)

