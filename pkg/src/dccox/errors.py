"""Exception types shared across the package."""


class DccoxError(Exception):
    """Base class for all package errors."""


class ParseError(DccoxError):
    """Malformed input file; carries the offending location."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class DivergenceError(DccoxError):
    """A parameter or exposure exponent left the numerically safe range."""


class SingularMatrixError(DccoxError):
    """A linear system in the homophily update is numerically singular."""


class DegenerateVarianceError(DccoxError):
    """Variance scale factor is not positive; too little activity at this time."""


class RateExplosionError(DccoxError):
    """A simulated dyad's dominating rate exceeds the configured cap."""


class GridMismatchError(DccoxError):
    """Curves evaluated on incompatible time grids."""


class ConfigError(DccoxError):
    """Invalid or unknown configuration entry."""
