"""Finite-resource measurement model: block GUE Hamiltonians on magnetization sectors."""

__version__ = "0.1.0"

from finmeas.errors import (
    ContractViolationError,
    DegenerateSpectrumError,
    FinmeasError,
    InvalidDimensionError,
    InvalidParameterError,
    NumericInputError,
    ShapeError,
)

__all__ = [
    "__version__",
    "FinmeasError",
    "InvalidDimensionError",
    "InvalidParameterError",
    "NumericInputError",
    "DegenerateSpectrumError",
    "ShapeError",
    "ContractViolationError",
]
