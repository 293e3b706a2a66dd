"""Joint user scheduling and beamforming for cooperative multipoint downlinks."""

from .exhaustive import run_algorithm2
from .phy import RateTargets, ScheduleSolution, rate_targets, validate_solution
from .scenario import ChannelSet, NetworkConfig, draw_scenario
from .sca import ScaOptions, run_algorithm1
from .zfsus import run_algorithm3

__all__ = [
    "ChannelSet", "NetworkConfig", "RateTargets", "ScaOptions", "ScheduleSolution", "draw_scenario",
    "rate_targets", "run_algorithm1", "run_algorithm2", "run_algorithm3", "validate_solution",
]
__version__ = "0.1.0"
