"""Error taxonomy shared by every SqzLab module.

Each error class carries the process exit code the command line reports for it:
2 for input/config problems, 3 for model singularities, 4 for analysis failures.
"""


class SqzLabError(Exception):
    exit_code = 1


class ConfigError(SqzLabError):
    """Config file missing, unreadable or not matching the schema."""

    exit_code = 2


class ConfigValidationError(ConfigError):
    """Config parsed but one or more physical invariants are violated."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = [f"  - {v}" for v in self.violations]
        super().__init__("invalid configuration:\n" + "\n".join(lines))


class DomainError(SqzLabError, ValueError):
    """Argument outside the domain of a physical formula."""

    exit_code = 2


class AliasingError(DomainError):
    pass


class GridCoverageError(DomainError):
    pass


class FitSetupError(SqzLabError):
    """Fit problem is ill-posed (degenerate free set, bad bounds, band outside data)."""

    exit_code = 2


class SingularityError(SqzLabError):
    exit_code = 3


class AnalysisError(SqzLabError):
    exit_code = 4


class EmptyBandError(AnalysisError):
    pass


class LineNotFoundError(AnalysisError):
    pass


class InfeasibleMeasurementError(AnalysisError):
    pass


class DegenerateDataError(AnalysisError):
    pass


class DegenerateSegmentError(AnalysisError):
    pass


class InputFileError(SqzLabError):
    """Input artifact (spectrum, time series) missing or unreadable."""

    exit_code = 2
