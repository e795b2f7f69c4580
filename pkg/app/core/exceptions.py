"""Error hierarchy for the solver library."""

from typing import Optional


class StefanSolverError(Exception):
    """Base class for every error raised by the package."""


class DomainError(StefanSolverError):
    """A value lies outside the effective domain D(beta_hat)."""


class InteriorityError(StefanSolverError):
    """The initial mean m0 is not interior to D(beta)."""


class GraphMismatch(StefanSolverError):
    """The requested operation needs a different graph family."""


class DimensionMismatch(StefanSolverError):
    """Field sizes do not match the mesh."""


class NonZeroMean(StefanSolverError):
    """A field that must have zero mean does not."""


class IncompatibleRHS(StefanSolverError):
    """A right-hand side does not annihilate constants."""


class MeanMismatch(StefanSolverError):
    """Two initial data sets have different means."""


class InconsistentState(StefanSolverError):
    """A state is missing data required by the operation."""


class SolverFailure(StefanSolverError):
    """Linear or nonlinear solver breakdown."""


class NewtonDivergence(SolverFailure):
    """Residual not reduced below tolerance within the iteration budget."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StepRejected(SolverFailure):
    """A time step failed; retry with the suggested (smaller) step."""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ConfigError(StefanSolverError):
    """Invalid configuration, reported with the offending key and line."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = ""
        if key is not None:
            location = f"{key}"
            if line is not None:
                location += f" (line {line})"
            location += ": "
        super().__init__(f"{location}{message}")


class InvalidMesh(StefanSolverError):
    """Mesh topology or geometry violates the bulk/boundary pairing."""


class NonConforming(StefanSolverError):
    """An operation on V received a field whose boundary is not the trace of its bulk."""
