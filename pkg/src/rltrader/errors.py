"""Exception types raised across the package."""


class RLTraderError(Exception):
    """Base class for all package errors."""


class IngestError(RLTraderError):
    """Transaction or price input could not be read at all."""


class InsufficientDataError(RLTraderError, ValueError):
    pass


class DegenerateBenchmarkError(RLTraderError, ValueError):
    pass


class DegeneratePoolError(RLTraderError, ValueError):
    pass


class MissingScoreError(RLTraderError, KeyError):
    pass


class OversellError(RLTraderError, ValueError):
    """A sale asks for more shares than the portfolio holds."""


class UnclassifiedStockError(RLTraderError, KeyError):
    """A traded stock has no risk bin in the classification."""


class UndefinedLikelihoodError(RLTraderError, ValueError):
    """Likelihood requested for a history with no sell events."""


class FitError(RLTraderError):
    """Every optimizer start failed."""
