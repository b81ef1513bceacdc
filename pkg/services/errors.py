"""
Error types raised by the services.

Mathematical refusals derive from RefusalError and may carry a witness vector;
the command layer turns them into exit code 3 and a refusal document.
"""

from typing import Optional

import numpy as np


class SectoriaError(Exception):
    """Base class for everything the package raises on purpose."""

    def __init__(self, message: str, witness: Optional[np.ndarray] = None):
        super().__init__(message)
        self.message = message
        self.witness = None if witness is None else np.asarray(witness)


class SchemaError(SectoriaError):
    """A configuration or problem document is malformed."""


class RefusalError(SectoriaError):
    """The input violates a mathematical hypothesis of the requested operation."""


class NotSectorial(RefusalError):
    pass


class NotElliptic(RefusalError):
    pass


class NotEllipticOnVa(RefusalError):
    pass


class NotDescendable(RefusalError):
    pass


class ShiftTooSmall(RefusalError):
    pass


class SingularSolve(RefusalError):
    def __init__(self, message: str, condition: float = float("inf"), witness=None):
        super().__init__(message, witness)
        self.condition = condition


class SumDecompositionFails(RefusalError):
    pass


class RangeNotDense(RefusalError):
    pass


class OutsideSector(RefusalError):
    pass


class MismatchedSpaces(RefusalError):
    pass


class BNotElliptic(RefusalError):
    pass


class LiftMismatch(RefusalError):
    pass


class CellNotSectorial(RefusalError):
    def __init__(self, message: str, cell: int = -1, witness=None):
        super().__init__(message, witness)
        self.cell = cell


class NonPositiveWeight(RefusalError):
    pass


class SetsOverlap(RefusalError):
    pass


class SupportTooLarge(RefusalError):
    pass


class WrongBoundaryCondition(RefusalError):
    pass


class LambdaOnSpectrum(RefusalError):
    pass


class OnDirichletSpectrum(RefusalError):
    pass


class CertificateFails(RefusalError):
    pass
