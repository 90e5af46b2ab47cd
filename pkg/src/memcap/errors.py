"""Exception hierarchy for memcap."""


class MemcapError(Exception):
    """Base class for all memcap errors."""


class SpecError(MemcapError, ValueError):
    """Malformed channel or constraint specification."""


class NoiseIndefinite(MemcapError):
    """Noise PSD has a clearly negative eigenvalue (inconsistent covariance taps)."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class NoiseSingular(MemcapError):
    """Noise PSD is (numerically) singular somewhere on the grid."""

    def __init__(self, message, frequencies=()):
        super().__init__(message)
        self.frequencies = list(frequencies)


class AllModesSingular(MemcapError):
    """Whitened channel is zero at every frequency; nothing can be transmitted."""


class NoConvergence(MemcapError):
    """An iterative routine failed to converge."""


class FormMismatch(MemcapError):
    """Two algebraically identical capacity expressions disagree numerically."""


class MNotPositive(MemcapError):
    """Per-frequency dual weight matrix left the positive-definite cone."""


class Infeasible(MemcapError):
    """Joint constraint set is empty."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NotRankOne(MemcapError):
    """A MISO per-antenna solution is not rank one within tolerance."""


class OracleBudgetExceeded(MemcapError):
    """Brute-force oracle would exceed its enumeration or dimension budget."""
