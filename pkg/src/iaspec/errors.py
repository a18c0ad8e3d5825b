"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """Input outside the physical or mathematical domain of an operation."""


class ConfigurationError(ValueError):
    """Invalid configuration detected before any numerical work starts."""


class FitError(RuntimeError):
    """Avoided-crossing fit failed.

    Carries the best model found so far (may be None) and the fit report,
    so callers can inspect what went wrong.
    """

    def __init__(self, message, model=None, report=None):
        super().__init__(message)
        self.model = model
        self.report = report


class UnderdeterminedFitError(FitError):
    """Spectroscopy data cannot constrain the model (e.g. single branch)."""


class ReadoutError(RuntimeError):
    """Ringdown readout failed (signal lost below the noise floor)."""


class TraceError(RuntimeError):
    """Too many points of an interference trace are missing."""


class UndefinedVisibilityError(RuntimeError):
    """Trace is too flat for a meaningful visibility."""


class NoPeakError(RuntimeError):
    """Magnitude spectrum has no usable local maximum above the DC lobe."""


class IasRunError(RuntimeError):
    """Adaptive estimation loop aborted; carries partial iteration records."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = list(records) if records is not None else []
