"""Mel'nikov forms for splitting of invariant manifolds in Hamiltonian systems."""

from . import dynamics, expr, melnikov, phase, separatrix, splitting
from .phase import SystemDef, catalog, extend_periodic, make_system

__all__ = ["dynamics", "expr", "melnikov", "phase", "separatrix", "splitting",
           "SystemDef", "catalog", "extend_periodic", "make_system"]
__version__ = "0.1.0"
