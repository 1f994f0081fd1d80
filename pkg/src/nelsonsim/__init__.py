"""Two-particle renormalized Nelson model on a truncated lattice Fock space."""

from .hamiltonians import PhysParams
from .propagator import SimState

__version__ = "0.1.0"
__all__ = ["PhysParams", "SimState"]
