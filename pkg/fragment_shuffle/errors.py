# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

from __future__ import annotations


class PreconditionError(ValueError):
    """
    Raised when an input lies outside the validity window of a bound.

    :param inequality: Human readable form of the violated inequality.
    """

    def __init__(self, inequality: str, message: str | None = None):
        self.inequality = inequality
        super().__init__(message or f"Precondition violated: {inequality}")


class InfeasibleTargetError(ValueError):
    """
    Raised when a central target cannot be reached inside a validity window.

    :param feasible: Interval of achievable central epsilon values.
    """

    def __init__(self, target: float, feasible: tuple[float, float]):
        self.target = target
        self.feasible = feasible
        super().__init__(
            f"Target epsilon_c={target:g} is infeasible; "
            f"achievable range is [{feasible[0]:g}, {feasible[1]:g}]."
        )


class DegenerateError(ValueError):
    """Raised when epsilon = 0 makes a debiasing factor divide by e^0 - 1."""


class UnboundedError(ValueError):
    """Raised when an attack advantage implies an unbounded privacy loss."""


class RoutingError(KeyError):
    """Raised when a report targets an undeclared instance or channel."""


class EmptyReleaseError(ValueError):
    """Raised when releasing a channel with no buffered report."""


class ReportFormatError(ValueError):
    """Raised on mixed report arity or mismatched dimensions."""


class PgmFormatError(ReportFormatError):
    """
    Raised on malformed PGM input.

    :param offset: Byte offset where parsing failed.
    """

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")
