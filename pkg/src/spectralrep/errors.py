"""Exception and warning types raised across the workbench."""


class SpectralError(ValueError):
    """Base class for all workbench errors."""


class ZeroRowOrColumn(SpectralError):
    pass


class NegativeEntry(SpectralError):
    pass


class MassMismatch(SpectralError):
    pass


class NotIdentified(SpectralError):
    pass


class RankOutOfBounds(SpectralError):
    pass


class RankDeficient(SpectralError):
    pass


class NonPositiveScore(SpectralError):
    """A log-based objective met a score u <= 0 in raw mode."""


class NonPositivePartition(SpectralError):
    pass


class Disconnected(SpectralError):
    pass


class RepresentationMismatch(SpectralError):
    pass


class DegenerateDenominator(SpectralError):
    pass


class NotConverged(SpectralError):
    def __init__(self, message, grad_norms=None):
        super().__init__(message)
        self.grad_norms = grad_norms


class SpanViolation(SpectralError):
    pass


class ZeroVector(SpectralError):
    pass


class IncompatiblePair(SpectralError):
    pass


class NonFiniteLoss(SpectralError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class DimensionMismatch(SpectralError):
    pass


class ConfigError(SpectralError):
    pass


class SingularGram(UserWarning):
    """Gram matrix was ill-conditioned; a ridge was applied."""


class NegativeEigenvalueWarning(UserWarning):
    pass
