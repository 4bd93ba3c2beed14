"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, IngestError -> 3,
NumericalError -> 4.
"""


class RvkatError(Exception):
    """Base class for all rvkat errors."""


class ConfigError(RvkatError):
    """Invalid configuration file, method spec, or CLI usage."""


class IngestError(RvkatError):
    """Malformed or inconsistent input data files."""


class NumericalError(RvkatError):
    """Numerical failure: non-convergence, degenerate fits, invalid statistics."""
