"""
Exceptions raised by hproj

Every error derives from HprojError and from the closest builtin, so callers
may catch either ``hproj.DomainError`` or a plain ``ValueError``.
"""

from typing import Optional


class HprojError(Exception):
    """Base class of every hproj error"""


class ShapeError(HprojError, ValueError):
    """Operand dimensions do not match"""


class DomainError(HprojError, ValueError):
    """Input is outside the domain of the operation"""


class NotSymmetricError(DomainError):
    pass


class NotOrthogonalError(DomainError):
    def __init__(self, error: float):
        super().__init__(f"Matrix is not orthogonal, orthogonality error {error:.3e}")
        self.error = error


class NotPSDError(DomainError):
    def __init__(self, eigenvalue: float):
        super().__init__(f"Matrix is not positive semidefinite, eigenvalue {eigenvalue:.3e}")
        self.eigenvalue = eigenvalue


class DegenerateReflectorError(DomainError):
    def __init__(self, norm: float, index: Optional[int] = None):
        where = "" if index is None else f" at position {index}"
        super().__init__(f"Degenerate Householder vector{where}, norm {norm:.3e}")
        self.norm = norm
        self.index = index


class InvalidRankError(DomainError):
    pass


class NonUnitDirectionError(DomainError):
    pass


class NonFiniteError(DomainError):
    pass


class ConvergenceError(HprojError, ArithmeticError):
    def __init__(self, message: str, sweeps: int):
        super().__init__(message)
        self.sweeps = sweeps


class UndefinedCorrelationError(HprojError, ArithmeticError):
    pass


class MalformedFileError(HprojError, ValueError):
    pass


class InvariantError(HprojError, ValueError):
    pass


class TrainingError(HprojError, RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class DirectionIndexError(HprojError, IndexError):
    pass
