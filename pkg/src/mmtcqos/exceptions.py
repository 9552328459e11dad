"""Exception hierarchy shared by the analysis, game and simulation layers."""


class MmtcError(Exception):
    """Base class for all package errors."""


class DomainError(MmtcError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class ConfigurationError(MmtcError, ValueError):
    """A scenario or configuration value is inconsistent or degenerate."""


class InfeasibleQoSError(MmtcError):
    """The QoS target cannot be met inside the admissible power range."""


class NoCrossingError(MmtcError):
    """Effective bandwidth and effective capacity do not cross on the bracket."""


class NoEstimateError(MmtcError):
    """An estimator was asked for a value before observing any events."""
