"""
Value-domain operators: 64-bit ints (wrapping), 64-bit floats, booleans.
Mixed int/float arithmetic promotes to float.
"""

import math
from typing import Any

from utils.canonical import INT64_MIN
from utils.errors import DivideByZero, EvaluationTypeError

_MODULUS = 2 ** 64


def wrap_int(value: int) -> int:
    return ((value - INT64_MIN) % _MODULUS) + INT64_MIN


def is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _numbers(op: str, left: Any, right: Any) -> None:
    if not (is_number(left) and is_number(right)):
        raise EvaluationTypeError(f"operator {op} needs numbers, got {_type(left)} and {_type(right)}")


def _type(value: Any) -> str:
    return "bool" if isinstance(value, bool) else type(value).__name__


def _int_div(left: int, right: int) -> int:
    quotient = abs(left) // abs(right)
    return -quotient if (left < 0) != (right < 0) else quotient


def _int_mod(left: int, right: int) -> int:
    remainder = abs(left) % abs(right)
    return -remainder if left < 0 else remainder


def apply_binary(op: str, left: Any, right: Any) -> Any:
    if op in ("&&", "||"):
        if not (isinstance(left, bool) and isinstance(right, bool)):
            raise EvaluationTypeError(f"operator {op} needs booleans, got {_type(left)} and {_type(right)}")
        return (left and right) if op == "&&" else (left or right)
    if op in ("==", "!="):
        if isinstance(left, bool) != isinstance(right, bool):
            raise EvaluationTypeError(f"cannot compare {_type(left)} with {_type(right)}")
        equal = left == right
        return equal if op == "==" else not equal
    _numbers(op, left, right)
    both_int = isinstance(left, int) and isinstance(right, int)
    if op == "+":
        return wrap_int(left + right) if both_int else float(left) + float(right)
    if op == "-":
        return wrap_int(left - right) if both_int else float(left) - float(right)
    if op == "*":
        return wrap_int(left * right) if both_int else float(left) * float(right)
    if op == "/":
        if right == 0:
            raise DivideByZero(f"division of {left!r} by zero")
        return wrap_int(_int_div(left, right)) if both_int else float(left) / float(right)
    if op == "%":
        if right == 0:
            raise DivideByZero(f"remainder of {left!r} by zero")
        return _int_mod(left, right) if both_int else math.fmod(float(left), float(right))
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise EvaluationTypeError(f"unknown binary operator {op}")


def apply_unary(op: str, operand: Any) -> Any:
    if op == "!":
        if not isinstance(operand, bool):
            raise EvaluationTypeError(f"operator ! needs a boolean, got {_type(operand)}")
        return not operand
    if op == "-":
        if not is_number(operand):
            raise EvaluationTypeError(f"operator - needs a number, got {_type(operand)}")
        return wrap_int(-operand) if isinstance(operand, int) else -operand
    raise EvaluationTypeError(f"unknown unary operator {op}")


def require_bool(value: Any, what: str) -> bool:
    if not isinstance(value, bool):
        raise EvaluationTypeError(f"{what} must be a boolean, got {_type(value)}")
    return value


def require_tag(value: Any, dim: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise EvaluationTypeError(f"tag for dimension '{dim}' must be an integer, got {_type(value)}")
    return value