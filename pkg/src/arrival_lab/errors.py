"""Exception hierarchy shared by every module of the workbench."""


class ArrivalLabError(Exception):
    """Base class for all workbench errors."""


class GridError(ArrivalLabError):
    """A state or operator is incompatible with its simulation grid."""


class UnresolvableWidthError(GridError):
    pass


class AliasingError(GridError):
    pass


class BoundaryLeakError(GridError):
    pass


class SupportViolationError(GridError):
    pass


class InvariantError(ArrivalLabError):
    """A state violates a structural invariant (hermiticity, trace, ...)."""


class ConvergenceError(ArrivalLabError):
    """A step-size or quadrature refinement failed to converge."""


class KernelError(ArrivalLabError):
    """A smearing kernel or propagator kernel failed its preflight check."""


class TruncationError(ArrivalLabError):
    """A truncated basis gave a spectrum that moved under enlargement."""


class CompletenessError(ArrivalLabError):
    """A set of class operators does not sum to the identity."""


class ConfigError(ArrivalLabError):
    """A scenario configuration failed validation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) if self.errors else "invalid config")
