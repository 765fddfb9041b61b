"""Distributionally robust Bayesian optimization under variation shift."""

from .acquisition import AcquisitionConfig, dr_objective, evaluate_acquisition, minimize_acquisition
from .core import (
    DesignSpace,
    Dataset,
    InvalidInputError,
    OracleError,
    OracleOutput,
    ProblemSpec,
    SampleRecord,
    indicator,
    penalized_cost,
)
from .solver import RunTrace, SolverAbort, SolverConfig, initialize, run, select_design

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig",
    "Dataset",
    "DesignSpace",
    "InvalidInputError",
    "OracleError",
    "OracleOutput",
    "ProblemSpec",
    "RunTrace",
    "SampleRecord",
    "SolverAbort",
    "SolverConfig",
    "dr_objective",
    "evaluate_acquisition",
    "indicator",
    "initialize",
    "minimize_acquisition",
    "penalized_cost",
    "run",
    "select_design",
]
