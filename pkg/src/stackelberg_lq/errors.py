"""Exception types, grouped by the CLI exit code they map to."""


class StackelbergError(Exception):
    exit_code = 1


class ConfigError(StackelbergError):
    """Malformed configuration file; carries line/column when known."""

    exit_code = 1

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 path: str | None = None):
        self.line, self.column, self.path = line, column, path
        where = ""
        if line is not None:
            where = f"{path or '<config>'}:{line}:{column or 1}: "
        super().__init__(where + message)


class InvalidParameter(StackelbergError, ValueError):
    exit_code = 1


class HardViolation(StackelbergError):
    exit_code = 2


class SpecialCaseInapplicable(StackelbergError):
    exit_code = 2


class NumericalFailure(StackelbergError):
    exit_code = 3


class RiccatiBlowUp(NumericalFailure):
    def __init__(self, equation: str, t: float, value: float):
        self.equation, self.t, self.value = equation, t, value
        super().__init__(f"{equation} exceeded the blow-up threshold at t={t:.6g} (|value|={value:.3g})")


class OffsetBlowUp(NumericalFailure):
    def __init__(self, equation: str, t: float, value: float):
        self.equation, self.t, self.value = equation, t, value
        super().__init__(f"{equation} exceeded the blow-up threshold at t={t:.6g} (|value|={value:.3g})")


class FilterVarianceError(NumericalFailure):
    pass


class CovarianceError(NumericalFailure):
    pass


class SingularRepresentation(NumericalFailure):
    pass


class SimulationDiverged(NumericalFailure):
    def __init__(self, path: int, step: int, detail: str = ""):
        self.path, self.step = path, step
        super().__init__(f"non-finite state on path {path} at step {step}" + (f": {detail}" if detail else ""))


class VerificationFailed(StackelbergError):
    exit_code = 4
