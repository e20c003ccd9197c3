"""Exception types shared across the toolkit."""


class IFBMError(Exception):
    """Base class for all toolkit errors."""


class DomainError(IFBMError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class UnsupportedRegimeError(DomainError):
    """Region semantics requested for K >= 0, where they are undefined."""


class NumericalError(IFBMError):
    """An iterative numerical procedure failed to bracket or converge."""


class ResourceLimitError(IFBMError):
    """A simulation request exceeds the configured sample cap."""


class DataLoadError(IFBMError):
    """A price file could not be parsed; the message names the offending row."""


class DegenerateBinningError(IFBMError):
    """Too few effective histogram bins remain for a chi-square test."""


class FitError(IFBMError):
    """Calibration failed on every candidate; carries the diagnostic surface."""

    def __init__(self, message, surface=None):
        super().__init__(message)
        self.surface = surface
