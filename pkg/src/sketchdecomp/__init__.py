"""Flow-level packet loss detection by Count-Min sketch decomposition."""

from ._accel import backend_name
from .operators import ConstraintSystem, Dims, recover_loss_sketches
from .sketch import CmSketch, FlowKey, HashFamily, sketch_new
from .solver import SolverParams, solve
from .windowing import WindowingConfig, build_series

__version__ = "0.1.0"

__all__ = [
    "CmSketch",
    "ConstraintSystem",
    "Dims",
    "FlowKey",
    "HashFamily",
    "SolverParams",
    "WindowingConfig",
    "backend_name",
    "build_series",
    "recover_loss_sketches",
    "sketch_new",
    "solve",
]
