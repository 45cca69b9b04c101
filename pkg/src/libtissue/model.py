"""Domain types shared by the tissue engine, cells and algorithms.

Antigen are plain ints (syscall numbers). Stores are fixed-length lists
where ``None`` marks an empty slot.
"""

from __future__ import annotations

import queue
import random
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Optional

Antigen = int

DEFAULT_ALPHABET = 1024
U32_MAX = 2**32 - 1


class ParamError(ValueError):
    """Invalid tissue or algorithm parameters."""


@dataclass(frozen=True)
class TissueParams:
    max_antigen: int = 1000
    max_cytokines: int = 0
    max_cells: int = 100
    cell_update_rate: int = 100_000  # microseconds per tick
    antigen_multiplier: int = 10
    probe_rate: int = 1_000_000  # microseconds per probe sample
    antigen_alphabet: int = DEFAULT_ALPHABET
    rng_seed: int = 0

    @property
    def ticks_per_probe(self) -> float:
        return self.probe_rate / self.cell_update_rate


def validate_params(raw: TissueParams) -> TissueParams:
    if raw.max_antigen < 1:
        raise ParamError("empty antigen store: max_antigen must be >= 1")
    if raw.max_cells < 1:
        raise ParamError("empty cell store: max_cells must be >= 1")
    if raw.max_cytokines < 0:
        raise ParamError("negative signal count: max_cytokines must be >= 0")
    if raw.cell_update_rate <= 0:
        raise ParamError("zero cell update rate: cell_update_rate must be > 0")
    if raw.probe_rate <= 0:
        raise ParamError("zero probe rate: probe_rate must be > 0")
    if raw.antigen_multiplier < 1:
        raise ParamError("zero antigen multiplier: antigen_multiplier must be >= 1")
    if raw.antigen_alphabet < 1:
        raise ParamError("empty antigen alphabet: antigen_alphabet must be >= 1")
    if raw.antigen_alphabet > U32_MAX + 1:
        raise ParamError("antigen alphabet exceeds the u32 range")
    if not 0 <= raw.rng_seed < 2**64:
        raise ParamError("rng_seed must be an unsigned 64-bit integer")
    return raw


def read_keyvalue_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key=value`` file. ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ParamError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def coerce_fields(cls, values: dict[str, str], *, source: str = "params"):
    """Build dataclass ``cls`` from string values; unknown keys are errors."""
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ParamError(f"{source}: unknown key {key!r}")
        default = getattr(cls(), key)
        try:
            if isinstance(default, bool):
                if raw not in ("0", "1", "true", "false"):
                    raise ValueError(raw)
                kwargs[key] = raw in ("1", "true")
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError:
            raise ParamError(f"{source}: bad value for {key!r}: {raw!r}") from None
    return cls(**kwargs)


def load_params(path: str | Path) -> TissueParams:
    return validate_params(coerce_fields(TissueParams, read_keyvalue_file(path), source=str(path)))


@dataclass
class AntigenProducer:
    action_time: int
    displayed: Optional[Antigen] = None
    remaining: int = 0
    loaded_at: int = -1  # tick of the current load, for duration accounting


@dataclass
class CytokineReceptor:
    signal: int
    level: float = 0.0


@dataclass
class CellReceptor:
    target_type: int
    bound: Optional[int] = None


@dataclass
class VRReceptor:
    lock: Antigen
    matched: bool = False


@dataclass
class CytokineProducer:
    signal: int
    output: float = 0.0


@dataclass(frozen=True)
class CellSpec:
    """Per-type repertoire description used to build cells."""

    cell_type: int
    num_antigen: int = 0
    antigen_receptors: int = 0
    cytokine_receptors: tuple[int, ...] = ()
    cell_receptors: tuple[int, ...] = ()
    vr_receptors: int = 0
    antigen_producers: int = 0
    action_time: int = 1
    cytokine_producers: tuple[int, ...] = ()
    response_producers: int = 0
    internal_cytokines: int = 0


@dataclass
class Cell:
    cell_type: int
    antigen_store: list[Optional[Antigen]]
    antigen_receptors: int
    cytokine_receptors: list[CytokineReceptor]
    cell_receptors: list[CellReceptor]
    vr_receptors: list[VRReceptor]
    antigen_producers: list[AntigenProducer]
    cytokine_producers: list[CytokineProducer]
    response_producers: int
    internal_cytokines: list[int]
    age_since_randomise: int = 0
    index: int = -1  # slot in the compartment cell store
    held: int = 0  # occupied antigen_store slots
    state: dict = field(default_factory=dict)  # algorithm-private data

    def bound_cells(self) -> list[int]:
        """Distinct cell indices bound by any cell receptor this tick."""
        seen: list[int] = []
        for r in self.cell_receptors:
            if r.bound is not None and r.bound not in seen:
                seen.append(r.bound)
        return seen

    @property
    def locks(self) -> list[Antigen]:
        return [r.lock for r in self.vr_receptors]


def draw_lock(rng: random.Random, alphabet: int) -> Antigen:
    return rng.randrange(alphabet)


def new_cell(
    spec: CellSpec,
    rng: random.Random,
    antigen_alphabet: int = DEFAULT_ALPHABET,
    known_types: Optional[Iterable[int]] = None,
) -> Cell:
    if known_types is not None and spec.cell_type not in set(known_types):
        raise ParamError(f"unknown cell type tag {spec.cell_type}")
    counts = (spec.num_antigen, spec.antigen_receptors, spec.vr_receptors,
              spec.antigen_producers, spec.response_producers, spec.internal_cytokines)
    if any(c < 0 for c in counts):
        raise ParamError(f"negative repertoire count in spec for type {spec.cell_type}")
    if spec.antigen_producers and spec.action_time < 1:
        raise ParamError("antigen producer action time must be >= 1")
    if spec.antigen_receptors and spec.num_antigen < 1:
        raise ParamError("cells with antigen receptors need num_antigen >= 1")
    return Cell(
        cell_type=spec.cell_type,
        antigen_store=[None] * spec.num_antigen,
        antigen_receptors=spec.antigen_receptors,
        cytokine_receptors=[CytokineReceptor(s) for s in spec.cytokine_receptors],
        cell_receptors=[CellReceptor(t) for t in spec.cell_receptors],
        vr_receptors=[VRReceptor(draw_lock(rng, antigen_alphabet)) for _ in range(spec.vr_receptors)],
        antigen_producers=[AntigenProducer(spec.action_time) for _ in range(spec.antigen_producers)],
        cytokine_producers=[CytokineProducer(s) for s in spec.cytokine_producers],
        response_producers=spec.response_producers,
        internal_cytokines=[0] * spec.internal_cytokines,
    )


@dataclass(frozen=True)
class ResponseRecord:
    tick: int
    cell_id: int
    value: Antigen


@dataclass
class Counters:
    """Debug counters for antigen flow through a compartment."""

    ingested: int = 0  # incoming antigen events (before multiplication)
    copies: int = 0  # copies written to tissue
    overwritten_tissue: int = 0
    transferred: int = 0
    overwritten_cell: int = 0
    loaded: int = 0
    expired: int = 0
    display_ticks: int = 0  # summed realised display durations of expired antigen
    responses: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


CellCallback = Callable[[Cell, "TissueCompartment"], None]
MatchFn = Callable[[Antigen, Antigen], bool]


class IngestQueue:
    """Thread-safe FIFO of client submissions, drained at each tick."""

    def __init__(self) -> None:
        self._q: queue.SimpleQueue = queue.SimpleQueue()

    def put_antigen(self, value: Antigen) -> None:
        self._q.put(("A", value))

    def put_signal(self, index: int, level: float) -> None:
        self._q.put(("S", index, level))

    def drain(self) -> list[tuple]:
        items = []
        while True:
            try:
                items.append(self._q.get_nowait())
            except queue.Empty:
                return items

    def empty(self) -> bool:
        return self._q.empty()


class TissueCompartment:
    """Fixed-capacity environment holding antigen, signals and cells."""

    def __init__(self, params: TissueParams):
        self.params = params
        self.antigen_store: list[Optional[Antigen]] = [None] * params.max_antigen
        self.antigen_count = 0
        self.signal_store: list[float] = [0.0] * max(1, params.max_cytokines)
        self.cell_store: list[Optional[Cell]] = [None] * params.max_cells
        self.tick_count = 0
        self.rng = random.Random(params.rng_seed)
        self.queue = IngestQueue()
        self.callbacks: dict[int, CellCallback] = {}
        self.match_fn: Optional[MatchFn] = None  # None means exact equality
        self.counters = Counters()
        self.responses: list[ResponseRecord] = []
        self.response_listeners: list[Callable[[ResponseRecord], None]] = []
        self.tracer = None  # optional AntigenTracer

    @property
    def cells(self) -> list[Cell]:
        return [c for c in self.cell_store if c is not None]

    def register_type(self, cell_type: int, callback: CellCallback) -> None:
        self.callbacks[cell_type] = callback

    def add_cell(self, spec: CellSpec, index: Optional[int] = None) -> Cell:
        for s in spec.cytokine_receptors + spec.cytokine_producers:
            if not 0 <= s < len(self.signal_store):
                raise ParamError(f"signal index {s} outside signal store of {len(self.signal_store)}")
        if index is None:
            free = [i for i, c in enumerate(self.cell_store) if c is None]
            if not free:
                raise ParamError(f"cell store full ({self.params.max_cells} cells)")
            index = free[0]
        elif self.cell_store[index] is not None:
            raise ParamError(f"cell slot {index} already occupied")
        cell = new_cell(spec, self.rng, self.params.antigen_alphabet, self.callbacks.keys())
        cell.index = index
        self.cell_store[index] = cell
        return cell

    def remove_cell(self, index: int) -> None:
        self.cell_store[index] = None


def new_compartment(params: TissueParams) -> TissueCompartment:
    return TissueCompartment(validate_params(params))


def with_seed(params: TissueParams, seed: int) -> TissueParams:
    return replace(params, rng_seed=seed)
