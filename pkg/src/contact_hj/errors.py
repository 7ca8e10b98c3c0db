"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, any
``SolverError`` -> 2.
"""


class ContactHJError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(ContactHJError, ValueError):
    """Invalid configuration or parameters."""


class InputError(ContactHJError, ValueError):
    """An operation precondition was violated by the caller."""


class DomainError(InputError):
    """A point is not a finite element of R^d."""


class SolverError(ContactHJError, RuntimeError):
    """A numerical procedure failed."""


class ConvexityError(SolverError):
    """The Legendre maximizer could not be bracketed."""


class ContractionError(SolverError):
    """The implicit one-step solve did not converge."""


class ConvergenceError(SolverError):
    """An outer iteration (Picard, polish) hit its cap."""


class BlowUpError(SolverError):
    """A characteristic left the finite range.

    Attributes
    ----------
    escape_time : float
        Time of the last finite state.
    """

    def __init__(self, message, escape_time):
        super().__init__(message)
        self.escape_time = escape_time


class ShootingError(SolverError):
    """No multistart seed reached the target point."""


class UnboundedError(SolverError):
    """Bracket expansion for the initial value inversion failed."""


class SchemeError(SolverError):
    """The finite-difference oracle lost monotonicity."""


class InconsistencyError(SolverError):
    """Classification outcomes were not monotone in the constant c."""
