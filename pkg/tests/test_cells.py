import itertools
import math

import pytest

from libtissue import engine
from libtissue.cells import (
    emit_cytokine,
    emit_response,
    match_vr_receptors,
    present_antigen,
    update_antigen_receptors,
    update_cell_receptors,
    update_cytokine_receptors,
)
from libtissue.model import CellSpec, TissueParams, new_compartment

from conftest import apc_spec


def _comp(max_antigen=1000, max_cells=100, seed=0, max_cytokines=0):
    comp = new_compartment(TissueParams(max_antigen=max_antigen, max_cells=max_cells,
                                        antigen_multiplier=1, rng_seed=seed, max_cytokines=max_cytokines))
    comp.register_type(1, lambda c, t: None)
    comp.register_type(2, lambda c, t: None)
    return comp


def _place(comp, slot, value):
    comp.antigen_store[slot] = value
    comp.antigen_count += 1


def test_empty_tissue_transfers_nothing():
    comp = _comp()
    cell = comp.add_cell(apc_spec(antigen_receptors=50))
    assert update_antigen_receptors(cell, comp) == 0
    assert cell.held == 0


def test_single_receptor_transfer_frequency():
    # Bernoulli oracle: one antigen in 1000 slots, one draw per trial
    comp = _comp(seed=3)
    cell = comp.add_cell(apc_spec(antigen_receptors=1, num_antigen=1))
    trials, hits = 100_000, 0
    for _ in range(trials):
        _place(comp, 0, 5)
        if update_antigen_receptors(cell, comp):
            hits += 1
        else:
            comp.antigen_store[0] = None
            comp.antigen_count -= 1
    p = 1 / 1000
    assert abs(hits / trials - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_full_tissue_first_draw_always_hits():
    comp = _comp(max_antigen=50)
    for i in range(50):
        _place(comp, i, i)
    cell = comp.add_cell(apc_spec(antigen_receptors=1, num_antigen=4))
    assert update_antigen_receptors(cell, comp) == 1


def test_transfer_conservation_with_cell_overwrite():
    comp = _comp(max_antigen=50)
    for i in range(50):
        _place(comp, i, i)
    cell = comp.add_cell(apc_spec(antigen_receptors=10, num_antigen=4))
    moved = update_antigen_receptors(cell, comp)
    removed = 50 - comp.antigen_count
    assert moved == removed and 1 <= moved <= 10
    # gained + destroyed by cell-store overwrite = removed from tissue
    assert cell.held + comp.counters.overwritten_cell == removed


def test_expected_transfer_count_matches_occupancy():
    comp = _comp(max_antigen=200, seed=11)
    cell = comp.add_cell(apc_spec(antigen_receptors=5, num_antigen=1000))
    occupied = 80
    trials, total = 4000, 0
    for _ in range(trials):
        comp.antigen_store = [7] * occupied + [None] * (200 - occupied)
        comp.antigen_count = occupied
        cell.antigen_store = [None] * 1000
        cell.held = 0
        total += update_antigen_receptors(cell, comp)
    # exact mean of sequential draws without replacement of hits:
    # E = sum_k P(k-th draw hits) computed by enumerating remaining occupancy
    dist = {occupied: 1.0}
    expected = 0.0
    for _ in range(5):
        nxt: dict[int, float] = {}
        for occ, pr in dist.items():
            hit = occ / 200
            expected += pr * hit
            nxt[occ - 1] = nxt.get(occ - 1, 0.0) + pr * hit
            nxt[occ] = nxt.get(occ, 0.0) + pr * (1 - hit)
        dist = nxt
    assert expected == pytest.approx(5 * occupied / 200, rel=0.03)
    sd = math.sqrt(5 * 0.4 * 0.6 / trials)
    assert abs(total / trials - expected) <= 3 * sd


def test_cytokine_receptor_copies_signal():
    comp = _comp()
    cell = comp.add_cell(CellSpec(cell_type=1, cytokine_receptors=(0,)))
    engine.set_tissue_signal(comp, 0, 0.7)
    update_cytokine_receptors(cell, comp)
    assert cell.cytokine_receptors[0].level == 0.7
    update_cytokine_receptors(cell, comp)
    assert cell.cytokine_receptors[0].level == 0.7


def test_cell_receptor_absent_target_never_binds():
    comp = _comp()
    t2 = comp.add_cell(CellSpec(cell_type=2, cell_receptors=(1, 1)))
    for _ in range(20):
        comp.add_cell(CellSpec(cell_type=2))
    for _ in range(1000):
        assert update_cell_receptors(t2, comp) == 0


def test_cell_receptor_bind_probability():
    comp = _comp(seed=5)
    for _ in range(50):
        comp.add_cell(CellSpec(cell_type=1))
    t2 = comp.add_cell(CellSpec(cell_type=2, cell_receptors=(1,)))
    draws = 100_000
    bound = sum(update_cell_receptors(t2, comp) for _ in range(draws))
    assert abs(bound / draws - 0.5) <= 3 * math.sqrt(0.25 / draws)


def test_cell_receptor_rebinds_after_target_removed():
    comp = _comp(max_cells=2)
    t1 = comp.add_cell(CellSpec(cell_type=1))
    t2 = comp.add_cell(CellSpec(cell_type=2, cell_receptors=(1,)))
    while update_cell_receptors(t2, comp) == 0:
        pass
    assert t2.cell_receptors[0].bound == t1.index
    comp.remove_cell(t1.index)
    update_cell_receptors(t2, comp)
    assert t2.cell_receptors[0].bound is None


def _bound_pair(displayed, locks):
    comp = _comp(max_cells=2)
    t1 = comp.add_cell(CellSpec(cell_type=1, antigen_producers=len(displayed), action_time=10))
    for p, v in zip(t1.antigen_producers, displayed):
        p.displayed, p.remaining = v, 5
    t2 = comp.add_cell(CellSpec(cell_type=2, cell_receptors=(1,), vr_receptors=len(locks), response_producers=1))
    for r, lock in zip(t2.vr_receptors, locks):
        r.lock = lock
    return comp, t1, t2


def test_unbound_cell_matches_nothing():
    comp, t1, t2 = _bound_pair([6], [6])
    assert match_vr_receptors(t2, comp) == []
    assert not t2.vr_receptors[0].matched


def test_exact_match_on_bound_cell():
    comp, t1, t2 = _bound_pair([6], [6])
    t2.cell_receptors[0].bound = t1.index
    assert match_vr_receptors(t2, comp) == [(0, 6)]
    assert t2.vr_receptors[0].matched


def test_mismatch():
    comp, t1, t2 = _bound_pair([5, 19], [6])
    t2.cell_receptors[0].bound = t1.index
    assert match_vr_receptors(t2, comp) == []


def test_matches_not_deduplicated_and_custom_predicate():
    comp, t1, t2 = _bound_pair([6, 6, 7], [6, 6, 100])
    t2.cell_receptors[0].bound = t1.index
    assert sorted(match_vr_receptors(t2, comp)) == [(0, 6), (0, 6), (1, 6), (1, 6)]
    within_one = lambda lock, key: abs(lock - key) <= 1
    got = match_vr_receptors(t2, comp, within_one)
    assert sorted(got) == [(0, 6), (0, 6), (0, 7), (1, 6), (1, 6), (1, 7)]


def test_matched_flag_is_monotone():
    comp, t1, t2 = _bound_pair([6], [6])
    t2.cell_receptors[0].bound = t1.index
    match_vr_receptors(t2, comp)
    t1.antigen_producers[0].displayed = 9
    match_vr_receptors(t2, comp)
    assert t2.vr_receptors[0].matched


def test_idle_producer_with_empty_store_stays_empty():
    comp = _comp()
    cell = comp.add_cell(apc_spec())
    present_antigen(cell, comp)
    assert cell.antigen_producers[0].displayed is None


def test_single_item_moves_onto_producer():
    comp = _comp()
    cell = comp.add_cell(apc_spec())
    cell.antigen_store[3] = 4
    cell.held = 1
    present_antigen(cell, comp)
    p = cell.antigen_producers[0]
    assert (p.displayed, p.remaining) == (4, 10)
    assert cell.held == 0 and all(a is None for a in cell.antigen_store)


def test_display_destroyed_exactly_after_action_time():
    comp = _comp()
    cell = comp.add_cell(apc_spec(action_time=10))
    cell.antigen_store[0] = 4
    cell.held = 1
    loaded_at = comp.tick_count
    present_antigen(cell, comp)
    seen = []
    while cell.antigen_producers[0].displayed is not None:
        comp.tick_count += 1
        present_antigen(cell, comp)
        seen.append(comp.tick_count)
    assert seen[-1] - loaded_at == 10
    assert comp.counters.expired == 1 and comp.counters.display_ticks == 10


def test_display_cannot_be_overwritten_while_shown():
    comp = _comp()
    cell = comp.add_cell(apc_spec(action_time=3))
    cell.antigen_store[0] = 4
    cell.held = 1
    present_antigen(cell, comp)
    cell.antigen_store[1] = 9
    cell.held = 1
    for _ in range(2):
        comp.tick_count += 1
        present_antigen(cell, comp)
        assert cell.antigen_producers[0].displayed == 4
    comp.tick_count += 1
    present_antigen(cell, comp)  # expiry then same-call reload
    assert cell.antigen_producers[0].displayed == 9


def test_cytokine_producer_set_and_zero():
    comp = _comp(max_cytokines=3)
    cell = comp.add_cell(CellSpec(cell_type=1, cytokine_producers=(2,)))
    cell.cytokine_producers[0].output = 1.0
    emit_cytokine(cell, comp)
    assert comp.signal_store[2] == 1.0
    cell.cytokine_producers[0].output = 0.0
    emit_cytokine(cell, comp)
    assert comp.signal_store[2] == 0.0


def test_two_producers_later_cell_wins():
    # enumerate both scheduler orders and check the tick result is one of them
    outcomes = set()
    for a, b in itertools.permutations([0.25, 0.75]):
        comp = _comp(max_cytokines=1)
        c1 = comp.add_cell(CellSpec(cell_type=1, cytokine_producers=(0,)))
        c2 = comp.add_cell(CellSpec(cell_type=1, cytokine_producers=(0,)))
        c1.cytokine_producers[0].output = a
        c2.cytokine_producers[0].output = b
        emit_cytokine(c1, comp)
        emit_cytokine(c2, comp)
        outcomes.add(comp.signal_store[0])
    assert outcomes == {0.25, 0.75}
    for seed in range(10):
        comp = _comp(max_cytokines=1, seed=seed)
        for level in (0.25, 0.75):
            comp.add_cell(CellSpec(cell_type=1, cytokine_producers=(0,))).cytokine_producers[0].output = level
        engine.tick(comp)
        assert comp.signal_store[0] in outcomes


def test_emit_response_logged_without_clients():
    comp = _comp()
    cell = comp.add_cell(CellSpec(cell_type=2, response_producers=1))
    comp.tick_count = 42
    rec = emit_response(cell, comp, 6)
    assert (rec.tick, rec.cell_id, rec.value) == (42, cell.index, 6)
    assert comp.responses == [rec]


def test_emit_response_multiplicity_and_listener():
    comp = _comp()
    cell = comp.add_cell(CellSpec(cell_type=2, response_producers=1))
    heard = []
    comp.response_listeners.append(heard.append)
    for v in (5, 6, 6):
        emit_response(cell, comp, v)
    assert [r.value for r in heard] == [5, 6, 6]
    assert len(comp.responses) == 3


def test_emit_response_needs_producer():
    comp = _comp()
    cell = comp.add_cell(CellSpec(cell_type=2))
    with pytest.raises(ValueError):
        emit_response(cell, comp, 6)
