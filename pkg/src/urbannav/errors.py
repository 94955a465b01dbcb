"""Exception hierarchy.

Errors fall in two families so the CLI can map them to exit codes:
``DataError`` (bad or missing inputs, exit 2) and ``NumericalError``
(non-finite or degenerate math, exit 3).
"""


class UrbanNavError(Exception):
    pass


class DataError(UrbanNavError, ValueError):
    pass


class NumericalError(UrbanNavError, ArithmeticError):
    pass


class ShapeMismatch(UrbanNavError, ValueError):
    pass


# geometry / ingestion
class DegeneratePose(DataError):
    pass


class DegenerateTrajectory(DataError):
    pass


class InvalidStepLength(DataError):
    pass


class OutOfRange(DataError, IndexError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


# datasets
class TrajectoryTooShort(DataError):
    pass


class SchemaVersionMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class DataEmpty(DataError):
    pass


class CountMismatch(DataError):
    pass


class CheckpointMismatch(DataError):
    pass


# numerics
class DegenerateAction(NumericalError):
    pass


class DegeneratePair(NumericalError):
    pass


class EmptyAfterExclusion(NumericalError):
    pass


class AllPairsDegenerate(NumericalError):
    pass


class NonFiniteInput(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, term: str, batch_id=None):
        self.term = term
        self.batch_id = batch_id
        msg = f"non-finite loss term {term!r}"
        if batch_id is not None:
            msg += f" at batch {batch_id}"
        super().__init__(msg)


class PolicyError(UrbanNavError, RuntimeError):
    def __init__(self, step: int, cause: BaseException):
        self.step = step
        super().__init__(f"policy failed at step {step}: {cause!r}")


class InvalidQuaternion(DataError):
    pass
