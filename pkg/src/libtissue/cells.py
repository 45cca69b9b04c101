"""Receptor and producer update rules.

Everything here runs on the scheduler thread inside ``engine.tick``.
Random slot picks use ``int(rng.random() * n)``; store sizes stay far
below 2**53 so the bias is negligible and the draw is much cheaper than
``randrange``.
"""

from __future__ import annotations

from typing import Optional

from .model import Antigen, Cell, MatchFn, ResponseRecord, TissueCompartment


def update_antigen_receptors(cell: Cell, compartment: TissueCompartment) -> int:
    """Move tissue antigen into the cell store, one random draw per receptor."""
    tissue = compartment.antigen_store
    store = cell.antigen_store
    n, m = len(tissue), len(store)
    rnd = compartment.rng.random
    tracer = compartment.tracer
    counters = compartment.counters
    moved = 0
    for _ in range(cell.antigen_receptors):
        i = int(rnd() * n)
        antigen = tissue[i]
        if antigen is None:
            continue
        tissue[i] = None
        compartment.antigen_count -= 1
        j = int(rnd() * m)
        old = store[j]
        if old is None:
            cell.held += 1
        else:
            counters.overwritten_cell += 1
            if tracer is not None:
                tracer.destroyed(old, "cell_overwrite", compartment.tick_count)
        store[j] = antigen
        moved += 1
    counters.transferred += moved
    return moved


def update_cytokine_receptors(cell: Cell, compartment: TissueCompartment) -> None:
    signals = compartment.signal_store
    for r in cell.cytokine_receptors:
        r.level = signals[r.signal]


def update_cell_receptors(cell: Cell, compartment: TissueCompartment) -> int:
    """Rebind every cell receptor to a random store index; return bound count."""
    store = compartment.cell_store
    n = len(store)
    rnd = compartment.rng.random
    bound = 0
    for r in cell.cell_receptors:
        j = int(rnd() * n)
        other = store[j]
        if other is not None and other is not cell and other.cell_type == r.target_type:
            r.bound = j
            bound += 1
        else:
            r.bound = None
    return bound


def displayed_keys(compartment: TissueCompartment, indices: list[int]) -> list[Antigen]:
    keys = []
    for j in indices:
        other = compartment.cell_store[j]
        if other is None:
            continue
        for p in other.antigen_producers:
            if p.displayed is not None:
                keys.append(p.displayed)
    return keys


def match_vr_receptors(
    cell: Cell, compartment: TissueCompartment, match_fn: Optional[MatchFn] = None
) -> list[tuple[int, Antigen]]:
    """Test VR locks against antigen displayed by bound cells.

    Returns ``(receptor index, antigen value)`` per match, without
    deduplication. ``match_fn=None`` selects exact equality.
    """
    bound = cell.bound_cells()
    if not bound:
        return []
    keys = displayed_keys(compartment, bound)
    if not keys:
        return []
    matches: list[tuple[int, Antigen]] = []
    if match_fn is None:
        counts: dict[Antigen, int] = {}
        for k in keys:
            counts[k] = counts.get(k, 0) + 1
        for idx, r in enumerate(cell.vr_receptors):
            hits = counts.get(r.lock)
            if hits:
                r.matched = True
                matches.extend([(idx, r.lock)] * hits)
    else:
        for idx, r in enumerate(cell.vr_receptors):
            for k in keys:
                if match_fn(r.lock, k):
                    r.matched = True
                    matches.append((idx, k))
    return matches


def _pick_held(cell: Cell, rnd) -> int:
    store = cell.antigen_store
    m = len(store)
    for _ in range(8):
        j = int(rnd() * m)
        if store[j] is not None:
            return j
    occupied = [j for j, a in enumerate(store) if a is not None]
    return occupied[int(rnd() * len(occupied))]


def present_antigen(cell: Cell, compartment: TissueCompartment) -> None:
    """Advance every antigen producer on the cell by one tick.

    A display counts down, is destroyed when it reaches zero, and an idle
    producer is reloaded from the cell store in the same call.
    """
    rnd = compartment.rng.random
    tick = compartment.tick_count
    counters = compartment.counters
    tracer = compartment.tracer
    for p in cell.antigen_producers:
        if p.remaining > 0:
            p.remaining -= 1
            if p.remaining == 0:
                counters.expired += 1
                counters.display_ticks += tick - p.loaded_at
                if tracer is not None:
                    tracer.destroyed(p.displayed, "expired", tick)
                p.displayed = None
        if p.displayed is None and cell.held:
            j = _pick_held(cell, rnd)
            p.displayed = cell.antigen_store[j]
            cell.antigen_store[j] = None
            cell.held -= 1
            p.remaining = p.action_time
            p.loaded_at = tick
            counters.loaded += 1
            if tracer is not None:
                tracer.displayed(p.displayed, tick)


def remove_cell_antigen(cell: Cell, compartment: TissueCompartment, slot: int) -> Optional[Antigen]:
    """Destroy the antigen in one cell-store slot (for use in callbacks)."""
    antigen = cell.antigen_store[slot]
    if antigen is not None:
        cell.antigen_store[slot] = None
        cell.held -= 1
        if compartment.tracer is not None:
            compartment.tracer.destroyed(antigen, "removed", compartment.tick_count)
    return antigen


def emit_cytokine(cell: Cell, compartment: TissueCompartment) -> None:
    for prod in cell.cytokine_producers:
        compartment.signal_store[prod.signal] = prod.output


def emit_response(cell: Cell, compartment: TissueCompartment, value: Antigen) -> ResponseRecord:
    if cell.response_producers < 1:
        raise ValueError(f"cell {cell.index} has no response producer")
    record = ResponseRecord(compartment.tick_count, cell.index, int(value))
    compartment.responses.append(record)
    compartment.counters.responses += 1
    for listener in list(compartment.response_listeners):
        listener(record)
    return record
