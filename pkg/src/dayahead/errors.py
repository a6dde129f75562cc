"""Exception hierarchy.

Each family maps to one CLI exit code: spec errors exit 2, data errors exit 3
and numeric degeneracies exit 4.
"""


class DayAheadError(Exception):
    exit_code = 1


class SpecError(DayAheadError, ValueError):
    exit_code = 2


class DataError(DayAheadError, ValueError):
    exit_code = 3


class NumericDegeneracy(DayAheadError, ArithmeticError):
    exit_code = 4


# market data
class MissingColumn(DataError):
    pass


class UnparseableRow(DataError):
    def __init__(self, line: int, reason: str = ""):
        self.line = line
        msg = f"cannot parse row at line {line}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class NonMonotoneTimestamps(DataError):
    pass


class UnrepairableDay(DataError):
    pass


class BoundaryOutOfRange(SpecError):
    pass


class DegenerateChannel(NumericDegeneracy):
    pass


# features
class InvalidConfig(SpecError):
    pass


class SliceTooShort(DataError):
    pass


# network
class LengthMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


# fanova
class DegenerateHistory(NumericDegeneracy):
    pass


# stats
class UndefinedTerm(NumericDegeneracy):
    pass


class ZeroVariance(NumericDegeneracy):
    pass


class AlignmentError(DataError):
    pass
