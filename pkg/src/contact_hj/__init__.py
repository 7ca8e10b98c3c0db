"""Implicit variational principle for contact Hamilton-Jacobi equations on flat tori."""

from .errors import (BlowUpError, ConfigError, ContactHJError, ContractionError, ConvergenceError,
                     ConvexityError, DomainError, InconsistencyError, InputError, SchemeError,
                     ShootingError, SolverError, UnboundedError)
from .grid import GridFunction, PeriodicGrid
from .system import ContactSystem, builtin, check_assumptions, custom, legendre_transform

__version__ = "0.1.0"

__all__ = [
    "BlowUpError", "ConfigError", "ContactHJError", "ContractionError", "ConvergenceError",
    "ConvexityError", "DomainError", "InconsistencyError", "InputError", "SchemeError",
    "ShootingError", "SolverError", "UnboundedError", "GridFunction", "PeriodicGrid",
    "ContactSystem", "builtin", "check_assumptions", "custom", "legendre_transform",
]
