"""Exception hierarchy shared by all finmeas modules."""


class FinmeasError(Exception):
    """Base class for errors raised by finmeas."""


class InvalidDimensionError(FinmeasError, ValueError):
    pass


class InvalidParameterError(FinmeasError, ValueError):
    pass


class NumericInputError(FinmeasError, ValueError):
    """Raised for NaN/inf inputs to numerical routines."""


class DegenerateSpectrumError(FinmeasError, ArithmeticError):
    """A spectrum has two levels closer than the degeneracy tolerance.

    Callers sampling random Hamiltonians are expected to catch this and
    draw again.
    """

    def __init__(self, min_gap: float, tol: float):
        super().__init__(f"spectrum degenerate: min gap {min_gap:.3e} <= tol {tol:.3e}")
        self.min_gap = min_gap
        self.tol = tol


class ShapeError(FinmeasError, ValueError):
    pass


class ContractViolationError(FinmeasError, ValueError):
    pass
