"""Microscopic motorway simulation with IDM car following and MOBIL lane changing."""

from mobilsim.core import IdmParams, MobilParams, Vehicle
from mobilsim.engine import DemandInterval, DemandProfile, ProbeSpec, SimConfig, run
from mobilsim.network import RoadNetwork, build_default_network

__all__ = [
    "DemandInterval",
    "DemandProfile",
    "IdmParams",
    "MobilParams",
    "ProbeSpec",
    "RoadNetwork",
    "SimConfig",
    "Vehicle",
    "build_default_network",
    "run",
]

__version__ = "0.1.0"
