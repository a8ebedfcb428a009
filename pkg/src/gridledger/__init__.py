"""Centralized and multi-area AC state estimation with a signed, gas-metered
ledger carrying every inter-area exchange."""
from .coordinator import DistributedResult, RunConfig, run_distributed
from .decomposition import AreaPartition, load_partition
from .estimator import EstimationOptions, EstimationResult, global_objective, solve_wls
from .ledger import Ledger, generate_identity, verify_chain
from .powernet import (Measurement, MeasurementSet, NetworkModel, StateVector, default_plan,
                       generate_measurements, ieee14, load_case)

__version__ = "0.1.0"

__all__ = [
    "AreaPartition", "DistributedResult", "EstimationOptions", "EstimationResult", "Ledger",
    "Measurement", "MeasurementSet", "NetworkModel", "RunConfig", "StateVector",
    "default_plan", "generate_identity", "generate_measurements", "global_objective",
    "ieee14", "load_case", "load_partition", "run_distributed", "solve_wls", "verify_chain",
]
