"""Error types that the CLI maps onto exit codes."""


class ConfigError(Exception):
    """Invalid configuration file or cross-field constraint violation (exit 2)."""


class DataError(Exception):
    """Dataset files missing, malformed, or insufficient (exit 3)."""


class NumericError(Exception):
    """Non-finite loss or gradient; training aborts instead of corrupting state (exit 4)."""


class NumericWarning(UserWarning):
    """Numeric concern that was repaired in place (e.g. clamped eigenvalues)."""
