"""Exception types mapped to CLI exit codes."""


class DissipatorError(Exception):
    """Base class for toolkit errors."""

    exit_code = 1


class ConfigError(DissipatorError):
    """Invalid configuration or malformed input files (exit code 2)."""

    exit_code = 2


class ResolutionError(DissipatorError):
    """Grid cannot resolve the requested oscillation scales (exit code 3)."""

    exit_code = 3


class NumericalAbort(DissipatorError):
    """A numerical validity check failed hard (exit code 4)."""

    exit_code = 4
