"""Provides the builtin operators of the expression calculator."""
import logging
from functools import wraps
from inspect import getmembers, isfunction, signature
from typing import Any, Callable, TypeVar

import numpy as np
import numpy.typing as npt

Value = float | np.floating | npt.NDArray[np.float64]


class DomainError(Exception):
    """Raised when an argument lies outside the domain of a builtin."""


FunctionT = TypeVar("FunctionT", bound=Callable)


def function(f: FunctionT) -> FunctionT:
    """Raise `DomainError` when some errors occur."""
    fname = f.__name__
    sig = signature(f)

    @wraps(f)
    def wrapper(*args: Any) -> Any:
        try:
            with np.errstate(all="ignore"):
                return f(*args)
        except DomainError:
            raise
        except Exception as e:
            logging.debug("[function] %s%s failed", fname, sig)
            raise DomainError(f"{fname}{sig}") from e

    return wrapper  # type: ignore


class Builtin:
    """Set of builtin operators, accepting floats and numpy arrays."""

    @staticmethod
    @function
    def neg(value: Value) -> Value:
        """Reverse the sign."""
        return np.negative(value)

    @staticmethod
    @function
    def exp(value: Value) -> Value:
        """Exponential."""
        return np.exp(value)

    @staticmethod
    @function
    def log(value: Value) -> Value:
        """Natural logarithm, defined for positive values."""
        if np.any(np.asarray(value) <= 0):
            raise DomainError("log of non-positive value")
        return np.log(value)

    @staticmethod
    @function
    def sin(value: Value) -> Value:
        """Sine."""
        return np.sin(value)

    @staticmethod
    @function
    def cos(value: Value) -> Value:
        """Cosine."""
        return np.cos(value)

    @staticmethod
    @function
    def sqrt(value: Value) -> Value:
        """Square root, defined for non-negative values."""
        if np.any(np.asarray(value) < 0):
            raise DomainError("sqrt of negative value")
        return np.sqrt(value)

    @staticmethod
    @function
    def abs(value: Value) -> Value:
        """Absolute value."""
        return np.abs(value)

    @staticmethod
    @function
    def add(left: Value, right: Value) -> Value:
        """Addition."""
        return np.add(left, right)

    @staticmethod
    @function
    def sub(left: Value, right: Value) -> Value:
        """Subtraction."""
        return np.subtract(left, right)

    @staticmethod
    @function
    def mul(left: Value, right: Value) -> Value:
        """Multiplication."""
        return np.multiply(left, right)

    @staticmethod
    @function
    def div(left: Value, right: Value) -> Value:
        """Division, the divisor must not vanish."""
        if np.any(np.asarray(right) == 0):
            raise DomainError("division by zero")
        return np.divide(left, right)

    @staticmethod
    @function
    def pow(left: Value, right: Value) -> Value:
        """
        Power.

        A negative base needs an integral exponent, a zero base a non-negative one.
        """
        base, exponent = np.broadcast_arrays(np.asarray(left, dtype=float), np.asarray(right, dtype=float))
        if np.any((base < 0) & (exponent != np.round(exponent))):
            raise DomainError("negative base with non-integral exponent")
        if np.any((base == 0) & (exponent < 0)):
            raise DomainError("zero base with negative exponent")
        return np.power(left, right)

    @classmethod
    def all_functions(cls) -> dict[str, Callable]:
        return dict(getmembers(cls, isfunction))


OPERATOR_NAMES = {
    "+": "add",
    "-": "sub",
    "*": "mul",
    "/": "div",
    "^": "pow",
}
