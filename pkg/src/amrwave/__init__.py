"""Patch-based AMR for 2D linear acoustics with a modelled device-execution layer."""

from .core_types import AmrConfig, Box, ConfigError, Hierarchy, InvariantError, NumericBlowup
from .amr import AmrSolver, RunStats

__all__ = ["AmrConfig", "AmrSolver", "Box", "ConfigError", "Hierarchy", "InvariantError",
           "NumericBlowup", "RunStats"]
