"""Exception hierarchy.

Two families matter to callers: :class:`InputError` (bad files, bad
configuration, uncovered windows) and :class:`ModelError` (numerical
failure while fitting or projecting). The CLI maps them to exit codes 2
and 3 respectively.
"""


class ExcessMortError(Exception):
    """Base class for all package errors."""

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class InputError(ExcessMortError):
    pass


class ModelError(ExcessMortError):
    pass


# -- ingestion / validation ---------------------------------------------------

class MalformedRow(InputError):
    pass


class MissingStratum(InputError):
    pass


class NonContiguousQuarters(InputError):
    pass


class NonContiguousMonths(InputError):
    pass


class NegativeCount(InputError):
    pass


class NonIntegerCount(InputError):
    pass


class DuplicateRow(InputError):
    pass


class WindowOutOfRange(InputError):
    pass


class WindowNotCovered(InputError):
    pass


class QuarterNotFound(InputError):
    pass


class StrataMismatch(InputError):
    pass


class NoOverlap(InputError):
    pass


class GranularityUnavailable(InputError):
    pass


class AggregationMismatch(InputError):
    pass


class InvalidSpec(InputError):
    pass


class ConfigError(InputError):
    pass


# -- model ----------------------------------------------------------------------

class EmptyBaseline(ModelError):
    pass


class SingularDesign(ModelError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column

    def to_dict(self):
        d = super().to_dict()
        d["column"] = self.column
        return d


class NonConvergence(ModelError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def to_dict(self):
        d = super().to_dict()
        d["diagnostics"] = self.diagnostics
        return d


class DegenerateDoF(ModelError):
    pass


class DrawCountTooSmall(ModelError):
    pass


class InsufficientYears(ModelError):
    pass


class ZeroExposure(ModelError):
    pass


class ZeroObservedRate(ModelError):
    pass


class DrawCountWarning(UserWarning):
    """Fewer than 100 Monte Carlo draws were requested."""


class ZeroExposureWarning(UserWarning):
    pass
