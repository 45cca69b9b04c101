"""Tissue compartment simulation for immune-inspired host monitoring."""

from .datasets import Dataset, ScenarioSpec, generate_dataset
from .engine import ProbeSample, ingest_antigen, run, sample_probe, set_tissue_signal, tick
from .model import (
    Cell,
    CellSpec,
    ParamError,
    TissueCompartment,
    TissueParams,
    new_cell,
    new_compartment,
    validate_params,
)
from .twocell import TwocellConfig, build_twocell, run_experiment

__all__ = [
    "Cell",
    "CellSpec",
    "Dataset",
    "ParamError",
    "ProbeSample",
    "ScenarioSpec",
    "TissueCompartment",
    "TissueParams",
    "TwocellConfig",
    "build_twocell",
    "generate_dataset",
    "ingest_antigen",
    "new_cell",
    "new_compartment",
    "run",
    "run_experiment",
    "sample_probe",
    "set_tissue_signal",
    "tick",
    "validate_params",
]
