import pytest

from libtissue.datasets import ScenarioSpec, generate_dataset
from libtissue.model import CellSpec, TissueParams, new_compartment


@pytest.fixture
def small_params():
    return TissueParams(max_antigen=100, max_cells=10, antigen_multiplier=1, rng_seed=7)


@pytest.fixture
def compartment(small_params):
    comp = new_compartment(small_params)
    comp.register_type(1, lambda cell, c: None)
    comp.register_type(2, lambda cell, c: None)
    return comp


@pytest.fixture(scope="session")
def normal_dataset():
    return generate_dataset(ScenarioSpec(label="normal", seed=1))


def apc_spec(**kw):
    base = dict(cell_type=1, num_antigen=10, antigen_receptors=1, antigen_producers=1, action_time=10)
    base.update(kw)
    return CellSpec(**base)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
