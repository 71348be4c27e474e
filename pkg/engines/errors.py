class EstimationError(Exception):
    """Базовая ошибка оценивания. exit_code используется CLI."""

    exit_code: int = 1


class ConfigError(EstimationError):
    exit_code = 2


class SchemaError(EstimationError):
    exit_code = 3


class InvalidInputError(EstimationError):
    exit_code = 3


class IngestError(EstimationError):
    exit_code = 3

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"строка {line}: {message}"
        super().__init__(message)


class SingularInitialization(EstimationError):
    exit_code = 4

    def __init__(self, message: str, min_eigenvalue: float) -> None:
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"{message} (наименьшее собственное значение {min_eigenvalue:.3e})")


class DegenerateInitialization(EstimationError):
    exit_code = 4


class SingularDesign(EstimationError):
    exit_code = 4


class NumericalBreakdown(EstimationError):
    exit_code = 5


class DivergenceDetected(EstimationError):
    exit_code = 5

    def __init__(self, step: int, norm: float) -> None:
        self.step = step
        self.norm = norm
        super().__init__(f"Расходимость на шаге {step}: ||beta|| = {norm:.3e}")


class InvalidPhase(EstimationError):
    exit_code = 6


class SingularLrv(EstimationError):
    exit_code = 7


class NotOveridentified(EstimationError):
    exit_code = 7
