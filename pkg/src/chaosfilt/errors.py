"""Exception types shared across the package."""


class ChaosFiltError(Exception):
    """Base class for all package errors."""


class DimensionError(ChaosFiltError, ValueError):
    """Array shapes do not agree with the model or operator dimension."""


class NumericalError(ChaosFiltError):
    """A computation produced an unusable result (blow-up, lost PSD, ...)."""


class BlowUpError(NumericalError):
    """A trajectory developed non-finite components.

    Attributes
    ----------
    step : int
        Index of the integration (or assimilation) step where it happened.
    state : ndarray or None
        The offending state, if available.
    """

    def __init__(self, message, step=None, state=None):
        super().__init__(f"{message} (step {step})" if step is not None else message)
        self.step = step
        self.state = state


class DivergenceError(NumericalError):
    """A filter left its domain of validity (covariance lost PSD, rank collapse)."""

    def __init__(self, message, step=None):
        super().__init__(f"{message} (step {step})" if step is not None else message)
        self.step = step


class ConfigError(ChaosFiltError, ValueError):
    """Invalid or inconsistent configuration."""
