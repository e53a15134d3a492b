"""Exception hierarchy shared by all modules.

Each class carries the process exit code the CLI maps it to.
"""


class SpecvoxError(Exception):
    exit_code = 1


class ArgumentError(SpecvoxError, ValueError):
    """Bad shapes, out-of-range arguments, mismatched grids."""

    exit_code = 2


class DomainError(ArgumentError):
    """Input outside the mathematical domain (e.g. negative data for NMF)."""


class RangeError(ArgumentError):
    """Disjoint wavelength ranges and similar support problems."""


class ConfigurationError(SpecvoxError):
    exit_code = 2


class DataError(SpecvoxError):
    """Malformed or missing on-disk artifacts."""

    exit_code = 3


class TrainingError(SpecvoxError, FloatingPointError):
    """Non-finite loss or gradient during optimization."""

    exit_code = 4
