"""Exception types raised across the package."""


class PsiconnError(Exception):
    """Base class for all package errors."""


class RecordFormatError(PsiconnError, ValueError):
    """A record, schedule or table file could not be parsed."""


class LayoutError(PsiconnError, ValueError):
    pass


class ScheduleRangeError(PsiconnError, ValueError):
    """A phase interval lies outside the record it refers to."""


class SpectralConfigError(PsiconnError, ValueError):
    pass


class BandResolutionError(PsiconnError, ValueError):
    """The frequency grid is too coarse for the requested band."""


class StratificationError(PsiconnError, ValueError):
    """Some class has too few rows for stratified cross-validation."""


class UndefinedMetricError(PsiconnError, ValueError):
    pass


class DegenerateInputError(PsiconnError, ValueError):
    """Rank statistic is undefined (all ties or all-zero differences)."""


class PlanError(PsiconnError, ValueError):
    pass


class StageError(PsiconnError):
    """Pipeline stage failure; carries the stage name and artifact path."""

    def __init__(self, stage, path, cause):
        self.stage = stage
        self.path = path
        self.cause = cause
        super().__init__(f"stage '{stage}' failed on {path}: {cause}")
