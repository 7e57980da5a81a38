"""
Procedure tables resolved by worker tiers (and by the local evaluator).

invoke() never raises: failures come back as error records so they can be
delivered through the store like any other result.
"""

import logging
import traceback
from typing import Any, Callable

from models.demands import error_record
from services.operators import apply_binary, apply_unary, is_number
from utils.errors import EductiveError, EvaluationTypeError

logger = logging.getLogger(__name__)

Procedure = Callable[..., Any]


def _fold(op: str):
    def procedure(*args):
        if not args:
            raise EvaluationTypeError(f"{op} needs at least one argument")
        result = args[0]
        for arg in args[1:]:
            result = apply_binary(op, result, arg)
        return result
    return procedure


def _extreme(pick):
    def procedure(*args):
        if not args or not all(is_number(a) for a in args):
            raise EvaluationTypeError("arguments must be numbers")
        return pick(args)
    return procedure


BUILTIN_PROCEDURES: dict[str, Procedure] = {
    "add": _fold("+"),
    "sub": _fold("-"),
    "mul": _fold("*"),
    "div": _fold("/"),
    "mod": _fold("%"),
    "max": _extreme(max),
    "min": _extreme(min),
    "neg": lambda x: apply_unary("-", x),
    "abs": lambda x: _extreme(max)(x, apply_unary("-", x)),
    "square": lambda x: apply_binary("*", x, x),
}


class ProcedureTable:
    def __init__(self, procedures: dict[str, Procedure] | None = None, include_builtins: bool = True):
        self._procedures: dict[str, Procedure] = dict(BUILTIN_PROCEDURES) if include_builtins else {}
        self._procedures.update(procedures or {})

    def register(self, name: str, procedure: Procedure) -> None:
        self._procedures[name] = procedure

    def names(self) -> list[str]:
        return sorted(self._procedures)

    def __contains__(self, name: str) -> bool:
        return name in self._procedures

    def invoke(self, name: str, args) -> Any:
        procedure = self._procedures.get(name)
        if procedure is None:
            return error_record("UnknownProcedure", name)
        try:
            return procedure(*args)
        except EductiveError as e:
            return error_record(e.kind, str(e))
        except Exception as e:
            logger.error(f"Procedure {name} raised unexpectedly: {e}")
            logger.error(f"Traceback: {traceback.format_exc()}")
            return error_record("ProceduralFailure", f"{type(e).__name__}: {e}")
