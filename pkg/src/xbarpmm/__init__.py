"""Crossbar compute-in-memory simulator for polynomial modular multiplication."""
from .crossbar import CrossbarConfig
from .mapping import MappingMode, make_plan
from .poly import Phi, Polynomial, RingParams, pmm_reference
from .sim import FabricConfig, make_fabric, simulate_pmm, simulate_pmm_batch

__all__ = [
    "CrossbarConfig", "FabricConfig", "MappingMode", "Phi", "Polynomial", "RingParams",
    "make_fabric", "make_plan", "pmm_reference", "simulate_pmm", "simulate_pmm_batch",
]
__version__ = "0.1.0"
