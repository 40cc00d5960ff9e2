"""Exception types shared across the package."""


class WavefioError(Exception):
    """Base class for all package errors."""


class ConfigError(WavefioError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class UpstreamMissingError(WavefioError):
    """A pipeline stage was asked to run before its inputs exist (exit code 3)."""


class NumericalError(WavefioError):
    """Numerical failure: cover gap, unreachable accuracy, non-finite data (exit code 4)."""


class CoverGapError(NumericalError):
    """Some phase-space sample is not covered by any admissible set."""
