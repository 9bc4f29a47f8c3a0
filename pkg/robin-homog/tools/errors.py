class RobinHomogError(Exception):
    """Base class for every failure raised by the pipeline."""

    exit_code = 1


class PreconditionError(RobinHomogError, ValueError):
    """Inputs violate a documented precondition (exit code 2)."""

    exit_code = 2


class NumericalError(RobinHomogError, RuntimeError):
    """A numerical procedure failed on valid inputs (exit code 1)."""

    exit_code = 1


class ConfigError(PreconditionError):
    pass


class ResolutionCapError(PreconditionError):
    pass


class InadmissibleMeasureError(PreconditionError):
    pass


class CenteringError(PreconditionError):
    pass


class OracleInapplicableError(PreconditionError):
    pass


class NoBoundaryContactError(PreconditionError):
    pass


class DegenerateBoundaryError(PreconditionError):
    pass


class DegenerateReflectionError(PreconditionError):
    pass


class MeasurePositivityError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    """Iterative solve stopped without meeting its tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class StepRejection(NumericalError):
    """No admissible reflection within dk_max; the caller should halve dt."""


class RankDeficientDesign(NumericalError):
    pass


class RegressionBiasError(NumericalError):
    pass
