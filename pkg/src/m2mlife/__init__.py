"""Battery-lifetime-aware uplink scheduling for machine-type devices."""

__version__ = "0.1.0"

from .lifetime import expected_lifetime, jain_index, network_lifetime
from .model import (EnergyProfile, NodeState, RadioEnvironment, ResourceGrid,
                    ScheduleDecision, TrafficProfile)
from .numerics import RateModel, lambert_w
from .scfdma import SchedulerObjective, brute_force, schedule
from .sim import SimConfig, SimReport, run_experiment, run_replication

__all__ = [
    "EnergyProfile", "NodeState", "RadioEnvironment", "RateModel", "ResourceGrid",
    "ScheduleDecision", "SchedulerObjective", "SimConfig", "SimReport", "TrafficProfile",
    "brute_force", "expected_lifetime", "jain_index", "lambert_w", "network_lifetime",
    "run_experiment", "run_replication", "schedule",
]
