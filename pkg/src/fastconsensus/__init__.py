"""Fast-consensus controller design for discrete-time high-order multi-agent systems."""

from .dynamics import SystemConfig, closed_loop_block, network_step, system_matrices
from .errors import (
    ConsensusError,
    DegenerateInput,
    DimensionMismatch,
    Disconnected,
    EmptyTrajectory,
    InvalidOptions,
    NonConvergence,
    ParseError,
)
from .finite_time import GainSchedule, deadbeat_schedule, final_consensus_state
from .graph import Graph, Spectrum, laplacian, spectrum
from .rate import (
    convergence_rate,
    gradient_descent_rate,
    optimal_gains_general,
    optimal_gains_order2,
    rate_lower_bound,
)
from .sim import Trajectory, simulate_constant, simulate_scheduled
from .stability import Stability, char_poly, disk_stability, routh_hurwitz_stable

__all__ = [
    "ConsensusError",
    "DegenerateInput",
    "DimensionMismatch",
    "Disconnected",
    "EmptyTrajectory",
    "GainSchedule",
    "Graph",
    "InvalidOptions",
    "NonConvergence",
    "ParseError",
    "Spectrum",
    "Stability",
    "SystemConfig",
    "Trajectory",
    "char_poly",
    "closed_loop_block",
    "convergence_rate",
    "deadbeat_schedule",
    "disk_stability",
    "final_consensus_state",
    "gradient_descent_rate",
    "laplacian",
    "network_step",
    "optimal_gains_general",
    "optimal_gains_order2",
    "rate_lower_bound",
    "routh_hurwitz_stable",
    "simulate_constant",
    "simulate_scheduled",
    "spectrum",
    "system_matrices",
]
