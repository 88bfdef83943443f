"""Quantum state diffusion for two coupled SQUID rings and two coupled Duffing oscillators.

Pure-state trajectories of the open two-mode system are integrated in a
moving Gaussian frame, and the entanglement entropy between the two modes is
averaged over time and trajectories. A classical RSJ integrator, ensemble and
parameter-sweep harness, oracle suite and command-line interface sit on top.
"""

__version__ = "0.1.0"

from .entangle import entanglement_entropy, partial_trace, von_neumann_entropy
from .ensemble import (ClassifierConfig, EnsembleConfig, EnsembleStats, SweepResult, beta_sweep,
                       capacitance_sweep, run_ensemble)
from .errors import (CheckpointError, ConfigError, DegenerateStateError, DivergenceError, HermiticityError,
                     IntegratorError, InvalidDensityMatrixError, InvalidDimensionError, SquidQSDError,
                     TruncationError)
from .model import (CircuitParams, DuffingParams, DuffingSystem, NormalizedParams, SquidSystem,
                    derive_dimensionless, scale_params)
from .qsd import IntegratorConfig, NoiseStream, TrajectoryRecord, qsd_step, run_trajectory
from .rsj import RsjState, RsjTrajectory, integrate_rsj

__all__ = [
    "__version__",
    "CheckpointError", "CircuitParams", "ClassifierConfig", "ConfigError", "DegenerateStateError",
    "DivergenceError", "DuffingParams", "DuffingSystem", "EnsembleConfig", "EnsembleStats",
    "HermiticityError", "IntegratorConfig", "IntegratorError", "InvalidDensityMatrixError",
    "InvalidDimensionError", "NoiseStream", "NormalizedParams", "RsjState", "RsjTrajectory",
    "SquidQSDError", "SquidSystem", "SweepResult", "TrajectoryRecord", "TruncationError",
    "beta_sweep", "capacitance_sweep", "derive_dimensionless", "entanglement_entropy",
    "integrate_rsj", "partial_trace", "qsd_step", "run_ensemble", "run_trajectory", "scale_params",
    "von_neumann_entropy",
]
