"""Exception types raised across the toolkit."""


class EikscatError(Exception):
    """Base class for all toolkit errors."""


class EllipticityViolation(EikscatError, ValueError):
    """The rescaled potential is too large for the metric to stay elliptic."""


class EmptySample(EikscatError, ValueError):
    pass


class UnsupportedOrder(EikscatError, ValueError):
    pass


class ExponentOutOfRange(EikscatError, ValueError):
    pass


class NoConvergence(EikscatError, RuntimeError):
    """Newton iteration exhausted its budget without meeting the tolerance."""


class HessianNotPositive(EikscatError, RuntimeError):
    pass


class SpectralFailure(EikscatError, RuntimeError):
    pass


class BadRadii(EikscatError, ValueError):
    pass


class FlowDivergence(EikscatError, RuntimeError):
    """Arc-length drift along an eikonal trajectory exceeded its budget."""


class TailNotConverged(EikscatError, RuntimeError):
    pass


class ContractionFailure(EikscatError, RuntimeError):
    """The asymptotic direction map is too far from the identity to invert."""


class ResolutionTooCoarse(EikscatError, ValueError):
    pass


class SolveFailure(EikscatError, RuntimeError):
    pass


class ConfigInvalid(EikscatError, ValueError):
    """Run configuration failed validation.

    ``errors`` holds ``(field, message)`` pairs.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.errors))
