"""Exception hierarchy.

Every solver failure maps to one class here so the CLI can translate it
into exit code 1 with a witness message.
"""


class ErgolqError(Exception):
    """Base class for all package errors."""


class DimensionError(ErgolqError, ValueError):
    """A matrix does not match the declared dimensions."""


class ParameterError(ErgolqError, ValueError):
    """A scalar parameter is outside its admissible range."""


class CorruptedStateError(ErgolqError):
    """N = I + sum D*PD lost its floor; P is no longer PSD upstream."""


class NotMeanSquareStableError(ErgolqError):
    """The second-moment operator is singular or unstable."""


class PSDLossError(ErgolqError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NotStabilizableError(ErgolqError):
    """Horizon doubling did not converge (finite cost condition violated)."""


class SolverIntegrityError(ErgolqError):
    """A certified property (e.g. Loewner monotonicity) failed."""


class SolverError(ErgolqError):
    """Generic non-convergence."""


class ClosedLoopUnstableError(ErgolqError):
    """The closed-loop drift is singular, so the costate has no stationary solution."""


class ExplosionError(ErgolqError):
    def __init__(self, message, path=None, time=None):
        super().__init__(message)
        self.path = path
        self.time = time


class NotAdmissibleError(ErgolqError):
    """The discounted integrand grows faster than the discount factor decays."""


class NoContractionError(ErgolqError):
    """Burn-in gaps stopped shrinking."""
