"""Structure-preserving time integration for geometrically nonlinear mechanics."""
from .poisson import BlockMass, ConfigurationError, PoissonModel, PoissonState, energy
from .integrators import RunRecord, SchemeConfig, StepFailure, run

__version__ = "0.1.0"

__all__ = [
    "BlockMass",
    "ConfigurationError",
    "PoissonModel",
    "PoissonState",
    "RunRecord",
    "SchemeConfig",
    "StepFailure",
    "energy",
    "run",
]
