"""Exception hierarchy shared across the package."""


class RefmiError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(RefmiError):
    """Matrix failed the Cholesky pivot test."""


class NonMonotoneMissingness(RefmiError):
    """Observed values reappear after a gap; lists the offending patient ids."""

    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"non-monotone missingness for patients: {', '.join(map(str, self.ids))}")


class MissingBaseline(RefmiError):
    """Baseline outcome (index 0) is missing for at least one patient."""

    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"missing baseline outcome for patients: {', '.join(map(str, self.ids))}")


class MalformedRow(RefmiError):
    """CSV row could not be parsed against the expected schema."""


class EmptyArm(RefmiError):
    """An operation requiring both treatment arms found one empty."""


class InsufficientData(RefmiError):
    """Too few observations to identify a model stage."""


class SingularDesign(RefmiError):
    """Regression design matrix is rank deficient."""


class DegenerateVariance(RefmiError):
    """A sample variance is requested from fewer than two observations."""


class TooFewImputations(RefmiError):
    """Rubin pooling needs at least two imputations."""


class NoObservedReference(RefmiError):
    """Simplified-case statistics need at least one observed reference outcome."""
