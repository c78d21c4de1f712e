"""Error hierarchy. Each class maps to one process exit code."""
from django.core.exceptions import ValidationError


class InterferenceError(Exception):
    exit_code = 1

    @property
    def error_class(self) -> str:
        return type(self).__name__


class ConfigError(InterferenceError):
    exit_code = 2


class DataError(InterferenceError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class StudyValidationError(DataError):
    """Every invariant violation found in a study, not only the first."""

    def __init__(self, error: ValidationError):
        self.error = error
        super().__init__('; '.join(self.messages))

    @property
    def messages(self) -> list[str]:
        return self.error.messages


class FitError(InterferenceError):
    exit_code = 4


class PropensityFitError(FitError):
    def __init__(self, message: str, trace: list[float] | None = None):
        super().__init__(message)
        self.trace = trace or []


class SingularDesignError(FitError):
    def __init__(self, message: str, terms: list[str] | None = None):
        super().__init__(message)
        self.terms = terms or []


class EmptyStratumError(FitError):
    pass


class CapabilityError(InterferenceError):
    exit_code = 5


class EnumerationLimitError(CapabilityError):
    pass


class UnsupportedCombinationError(CapabilityError):
    pass


class ContractError(CapabilityError):
    pass


class NumericalError(InterferenceError):
    exit_code = 6


class SingularJacobianError(NumericalError):
    def __init__(self, message: str, condition_number: float):
        super().__init__(message)
        self.condition_number = condition_number


class SimulationError(InterferenceError):
    exit_code = 7
