"""The ``twocell`` algorithm.

Type 1 cells (antigen-presenting) pull syscall antigen from the tissue
and display it on their producers. Type 2 cells bind Type 1 cells, match
displayed antigen against their VR locks, and log a response per match.
An unmatched Type 2 cell redraws all its locks once per lifespan.
"""

from __future__ import annotations

import hashlib
import logging
import math
import threading
import time
from dataclasses import dataclass, field, fields, replace
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

from . import engine
from .cells import emit_response, match_vr_receptors
from .model import (
    Cell,
    CellSpec,
    ParamError,
    ResponseRecord,
    TissueCompartment,
    TissueParams,
    coerce_fields,
    draw_lock,
    new_compartment,
    read_keyvalue_file,
    validate_params,
)
from .replay import ReplayEvent, schedule_events

log = logging.getLogger(__name__)

TYPE1, TYPE2 = 1, 2
CPU_SIGNAL = 0
ACTION_TIME_RESET = 100


@dataclass(frozen=True)
class TwocellConfig:
    max_antigen: int = 1000
    max_cytokines: int = 0
    max_cells: int = 100
    cell_update_rate: int = 100_000
    antigen_multiplier: int = 10
    num_cells_1: int = 50
    num_antigen_1: int = 100
    num_antigen_receptors_1: int = 10
    num_antigen_producers_1: int = 10
    antigen_producer_action_time: int = 10
    num_cells_2: int = 50
    cell_lifespan_2: int = 100
    num_cell_receptors_2: int = 2
    num_vr_receptors_2: int = 20
    num_response_producers_2: int = 1
    probe_rate: int = 1_000_000
    antigen_alphabet: int = 1024
    rng_seed: int = 0
    signal_enabled: bool = False

    def tissue_params(self) -> TissueParams:
        names = {f.name for f in fields(TissueParams)}
        return TissueParams(**{k: getattr(self, k) for k in names})


def validate_config(config: TwocellConfig) -> TwocellConfig:
    validate_params(config.tissue_params())
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name.startswith("num_") and value < 1:
            raise ParamError(f"{f.name} must be positive")
    if config.cell_lifespan_2 < 1:
        raise ParamError("cell_lifespan_2 must be >= 1")
    if config.antigen_producer_action_time < 1:
        raise ParamError("antigen_producer_action_time must be >= 1")
    if config.num_cells_1 + config.num_cells_2 > config.max_cells:
        raise ParamError("num_cells_1 + num_cells_2 exceeds max_cells")
    return config


def load_config(path: str | Path) -> TwocellConfig:
    return validate_config(coerce_fields(TwocellConfig, read_keyvalue_file(path), source=str(path)))


def format_config(config: TwocellConfig) -> str:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        lines.append(f"{f.name}={int(v) if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


# -- signal-controlled action time -----------------------------------------

@dataclass(frozen=True)
class ActionTimeState:
    current: int = ACTION_TIME_RESET
    previous_signal: float = 0.0


def update_action_time(state: ActionTimeState, new_signal: float) -> ActionTimeState:
    """Same signal keeps the action time, a drop halves it (floor, minimum 1),
    a rise resets it to 100."""
    if new_signal < state.previous_signal:
        current = max(1, state.current // 2)
    elif new_signal > state.previous_signal:
        current = ACTION_TIME_RESET
    else:
        current = state.current
    return ActionTimeState(current, new_signal)


# -- cell cycles ------------------------------------------------------------

def type1_cycle(cell: Cell, compartment: TissueCompartment, config: TwocellConfig) -> None:
    # antigen presentation itself is advanced by the scheduler after all callbacks
    if not config.signal_enabled:
        return
    state = update_action_time(cell.state["action"], cell.cytokine_receptors[0].level)
    cell.state["action"] = state
    for p in cell.antigen_producers:
        p.action_time = state.current
        if p.remaining > state.current:
            p.remaining = state.current


def randomise_locks(cell: Cell, compartment: TissueCompartment) -> None:
    rng = compartment.rng
    alphabet = compartment.params.antigen_alphabet
    for r in cell.vr_receptors:
        r.lock = draw_lock(rng, alphabet)
    cell.state["randomised"] = cell.state.get("randomised", 0) + 1


def type2_cycle(cell: Cell, compartment: TissueCompartment, config: TwocellConfig) -> int:
    matches = match_vr_receptors(cell, compartment, compartment.match_fn)
    for _, value in matches:
        emit_response(cell, compartment, value)
        cell.internal_cytokines[0] += 1
    cell.age_since_randomise += 1
    if cell.internal_cytokines[0] == 0 and cell.age_since_randomise >= config.cell_lifespan_2:
        randomise_locks(cell, compartment)
        cell.age_since_randomise = 0
    return len(matches)


def type1_spec(config: TwocellConfig) -> CellSpec:
    return CellSpec(
        cell_type=TYPE1,
        num_antigen=config.num_antigen_1,
        antigen_receptors=config.num_antigen_receptors_1,
        cytokine_receptors=(CPU_SIGNAL,),
        antigen_producers=config.num_antigen_producers_1,
        action_time=ACTION_TIME_RESET if config.signal_enabled else config.antigen_producer_action_time,
    )


def type2_spec(config: TwocellConfig) -> CellSpec:
    return CellSpec(
        cell_type=TYPE2,
        cell_receptors=(TYPE1,) * config.num_cell_receptors_2,
        vr_receptors=config.num_vr_receptors_2,
        response_producers=config.num_response_producers_2,
        internal_cytokines=1,
    )


def build_twocell(config: TwocellConfig, seed: Optional[int] = None) -> TissueCompartment:
    config = validate_config(config)
    params = config.tissue_params()
    if seed is not None:
        params = replace(params, rng_seed=seed)
    compartment = new_compartment(params)
    compartment.register_type(TYPE1, partial(type1_cycle, config=config))
    compartment.register_type(TYPE2, partial(type2_cycle, config=config))
    spec1, spec2 = type1_spec(config), type2_spec(config)
    for _ in range(config.num_cells_1):
        cell = compartment.add_cell(spec1)
        cell.state["action"] = ActionTimeState()
    for _ in range(config.num_cells_2):
        compartment.add_cell(spec2)
    return compartment


def type2_cells(compartment: TissueCompartment) -> list[Cell]:
    return [c for c in compartment.cells if c.cell_type == TYPE2]


def twocell_probe(include_locks: bool = False):
    """Probe callback: cumulative input/response counts plus display state."""

    def probe(compartment: TissueCompartment):
        producers = [p for c in compartment.cells if c.cell_type == TYPE1 for p in c.antigen_producers]
        displayed = sum(1 for p in producers if p.displayed is not None)
        mean_at = sum(p.action_time for p in producers) / len(producers) if producers else 0.0
        t2 = type2_cells(compartment)
        out = [
            ("ingested", compartment.counters.ingested),
            ("responses", compartment.counters.responses),
            ("tissue_antigen", compartment.antigen_count),
            ("displayed", displayed),
            ("mean_action_time", mean_at),
            ("signal", compartment.signal_store[CPU_SIGNAL]),
            ("matched_cells", sum(1 for c in t2 if c.internal_cytokines[0] > 0)),
        ]
        if include_locks:
            out.append(("vr_locks", [lock for c in t2 for lock in c.locks]))
        return out

    return probe


# -- experiments ------------------------------------------------------------

def derive_seeds(seed: int, n: int) -> list[int]:
    out = []
    for i in range(n):
        digest = hashlib.blake2b(f"{seed}/{i}".encode(), digest_size=8).digest()
        out.append(int.from_bytes(digest, "big"))
    return out


@dataclass
class RunResult:
    index: int
    seed: int
    responses: list[ResponseRecord] = field(default_factory=list)
    probes: list[engine.ProbeSample] = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    ticks: int = 0
    error: Optional[str] = None

    @property
    def mean_action_time(self) -> float:
        """Mean realised display duration (ticks) of expired antigen."""
        expired = self.counters.get("expired", 0)
        return self.counters.get("display_ticks", 0) / expired if expired else float("nan")


def run_ticks_needed(events: Sequence[ReplayEvent], rate: float, lead_in_s: float, tail_s: float, tick_us: int) -> int:
    last = events[-1].offset if events else 0
    span_us = 0 if math.isinf(rate) else last / rate
    return math.ceil((lead_in_s * 1e6 + span_us + tail_s * 1e6) / tick_us) + 1


def run_once(
    config: TwocellConfig,
    events: Sequence[ReplayEvent],
    seed: int,
    *,
    rate: float = 1.0,
    lead_in_s: float = 0.0,
    tail_s: float = 60.0,
    probe_locks: bool = False,
    after_tick=None,
    index: int = 0,
) -> RunResult:
    """One virtual-time run: lead-in, paced replay, then a quiet tail."""
    compartment = build_twocell(config, seed)
    schedule = schedule_events(events, rate, start_us=round(lead_in_s * 1e6))
    ticks = run_ticks_needed(events, rate, lead_in_s, tail_s, config.cell_update_rate)
    probes = engine.run(
        compartment, ticks, schedule=schedule, probe=twocell_probe(probe_locks), after_tick=after_tick
    )
    return RunResult(index, seed, list(compartment.responses), probes,
                     compartment.counters.as_dict(), compartment.tick_count)


def run_realtime(
    config: TwocellConfig,
    events: Sequence[ReplayEvent],
    seed: int,
    *,
    rate: float = 1.0,
    lead_in_s: float = 10.0,
    tail_s: float = 60.0,
    probe_locks: bool = False,
    addr: str = "127.0.0.1:0",
    index: int = 0,
) -> RunResult:
    """Wall-clock run: server thread, replay client after the lead-in."""
    from .replay import replay_events
    from .server import TissueClient, TissueServer

    compartment = build_twocell(config, seed)
    stop = threading.Event()
    probes: list[engine.ProbeSample] = []
    failure: list[BaseException] = []

    def scheduler():
        try:
            probes.extend(engine.run(compartment, mode="realtime", stop=stop, probe=twocell_probe(probe_locks)))
        except BaseException as exc:  # surfaced after join
            failure.append(exc)

    with TissueServer(compartment, addr) as server:
        thread = threading.Thread(target=scheduler, name="tissue-scheduler", daemon=True)
        thread.start()
        time.sleep(lead_in_s)
        with TissueClient(server.address, "antigen") as ac, TissueClient(server.address, "signal") as sc:
            replay_events(events, rate, ac, sc)
        deadline = time.monotonic() + tail_s
        while time.monotonic() < deadline and thread.is_alive():
            time.sleep(min(0.05, tail_s))
        stop.set()
        thread.join()
    if failure:
        raise failure[0]
    return RunResult(index, seed, list(compartment.responses), probes,
                     compartment.counters.as_dict(), compartment.tick_count)


def run_experiment(
    config: TwocellConfig,
    events: Sequence[ReplayEvent],
    repeats: int,
    rate: float = 1.0,
    *,
    seed: int = 0,
    seeds: Optional[Sequence[int]] = None,
    mode: str = "virtual",
    lead_in_s: Optional[float] = None,
    tail_s: float = 60.0,
    probe_locks: bool = False,
) -> list[RunResult]:
    """Repeat a run with distinct derived seeds; failed runs are recorded, not raised."""
    seeds = list(seeds) if seeds is not None else derive_seeds(seed, repeats)
    if len(seeds) != repeats:
        raise ValueError("need one seed per repeat")
    if lead_in_s is None:
        lead_in_s = 0.0 if mode == "virtual" else 10.0
    results = []
    for i, s in enumerate(seeds):
        try:
            if mode == "virtual":
                res = run_once(config, events, s, rate=rate, lead_in_s=lead_in_s, tail_s=tail_s,
                               probe_locks=probe_locks, index=i)
            elif mode == "realtime":
                res = run_realtime(config, events, s, rate=rate, lead_in_s=lead_in_s, tail_s=tail_s,
                                   probe_locks=probe_locks, index=i)
            else:
                raise ValueError(f"unknown mode {mode!r}")
        except Exception as exc:
            log.error("run %d (seed %d) failed: %s", i, s, exc)
            res = RunResult(i, s, error=f"{type(exc).__name__}: {exc}")
        results.append(res)
    return results


def write_response_log(path: str | Path, responses: Sequence[ResponseRecord]) -> None:
    lines = ["tick,cell_id,syscall"] + [f"{r.tick},{r.cell_id},{r.value}" for r in responses]
    Path(path).write_text("\n".join(lines) + "\n")


def read_response_log(path: str | Path) -> list[ResponseRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "tick,cell_id,syscall":
        raise ValueError(f"{path}: missing response log header")
    out = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            tick, cell, value = (int(x) for x in line.split(","))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad response row {line!r}") from None
        out.append(ResponseRecord(tick, cell, value))
    return out
