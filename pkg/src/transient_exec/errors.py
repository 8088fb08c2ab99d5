"""Exception and warning classes shared across the package."""


class TransientExecError(Exception):
    """Base class for all package errors."""

    #: process exit code used by the CLI when this error aborts a command
    exit_code = 1


# market data

class MalformedRow(TransientExecError):
    exit_code = 10

    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


class SchemaMismatch(TransientExecError):
    exit_code = 11


class MalformedInput(TransientExecError):
    exit_code = 12


class DataWarning(UserWarning):
    """Recoverable data problem (dropped trades, skipped days, stale mids)."""


# calibration

class DegenerateBins(TransientExecError):
    exit_code = 20


class FitDiverged(TransientExecError):
    exit_code = 21


class SingularDesign(TransientExecError):
    exit_code = 22

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(f"{message} (condition number {condition_number:.3g})")
        self.condition_number = condition_number


class InsufficientData(TransientExecError):
    exit_code = 23


# cost model

class NonConvexImpactMatrix(TransientExecError):
    """Symmetrized impact matrix is not positive definite."""

    exit_code = 30


class InfeasibleParticipation(TransientExecError):
    exit_code = 31


# optimizer

class SingularSystem(TransientExecError):
    exit_code = 40


class NonConvex(TransientExecError):
    exit_code = 41


class MaxIterationsExceeded(UserWarning):
    """Solver stopped at its iteration cap; best iterate returned."""
