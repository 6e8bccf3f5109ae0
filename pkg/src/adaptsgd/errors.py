"""Exception hierarchy shared by all modules."""


class AdaptSGDError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AdaptSGDError, ValueError):
    """Invalid configuration or argument value."""


class DataError(ConfigError):
    """Malformed dataset (bad labels, shapes, ...)."""


class OracleFault(AdaptSGDError):
    """An oracle produced a non-finite sample.

    ``draw_index`` is the position of the offending realization inside its batch.
    """

    def __init__(self, message, draw_index=None):
        super().__init__(message)
        self.draw_index = draw_index


class OracleUnavailable(AdaptSGDError):
    """Requested an exact quantity the oracle does not provide."""


class DivergenceError(AdaptSGDError):
    """An iterate became non-finite. The partial trace is attached."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class LineSearchFailed(AdaptSGDError):
    """No trial constant below the safety ceiling passed the acceptance test."""

    def __init__(self, message, last_L=None, trials=0):
        super().__init__(message)
        self.last_L = last_L
        self.trials = trials


class InvariantError(AdaptSGDError):
    """Internal invariant violated (indicates a bug or corrupted state)."""
