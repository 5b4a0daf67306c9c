"""Exception types shared across the package."""


class ContourQAError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(ContourQAError, ValueError):
    """Two rasters that must share shape/spacing do not."""


class DomainError(ContourQAError, ValueError):
    """A numeric input lies outside its documented domain."""


class DegenerateInputError(ContourQAError, ValueError):
    """An operation received an input it cannot meaningfully act on (e.g. an empty mask)."""


class EmptyInputError(ContourQAError, ValueError):
    """A collection that must be nonempty was empty."""


class UndefinedMetricError(ContourQAError, ValueError):
    """The requested statistic is undefined on this input (e.g. single-class AUC)."""


class ConfigurationError(ContourQAError, ValueError):
    """A configuration object is inconsistent with the model or data it is applied to."""


class UnachievableTargetError(ContourQAError, ValueError):
    """No uncertainty prefix of the calibration set meets the requested accuracy.

    Carries the best attainable operating point so callers can report it.
    """

    def __init__(self, target_accuracy: float, best_accuracy: float, best_coverage: float):
        self.target_accuracy = target_accuracy
        self.best_accuracy = best_accuracy
        self.best_coverage = best_coverage
        super().__init__(
            f"no uncertainty threshold reaches accuracy {target_accuracy:.4f}; "
            f"best attainable is {best_accuracy:.4f} at coverage {best_coverage:.4f}"
        )
