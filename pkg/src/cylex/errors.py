"""Exception types shared across the package."""


class CylexError(Exception):
    """Base class for package errors."""


class ConfigError(CylexError, ValueError):
    """Invalid configuration value or file."""


class StructureError(CylexError, ValueError):
    """Path pieces that do not fit together (bad chaining, bad segment)."""


class NotNiceError(CylexError):
    """The window cannot be avoided, so conditioning on avoiding it is undefined."""


class UndefinedStateError(CylexError, KeyError):
    """The h-process kernel was queried at a site where h vanishes."""


class EmptyMeasureError(CylexError):
    """No conditioned path connects the two levels."""


class BudgetError(CylexError):
    """An enumeration exceeded its configured budget."""


class ExtinctionError(CylexError):
    """All particle weights vanished."""


class DegenerateEstimateError(CylexError):
    """Monte Carlo averages are identically zero; the slope cannot be fitted."""


class ConvergenceError(CylexError):
    """An iterative method did not reach its tolerance."""
