"""Operator table shared by the CGP interpreter, expression trees and closed forms.

Genomes reference operators by their position in ``OPERATORS``; the order is
part of the CGPv1 genome format and must never change.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

TABLE_VERSION = 1


@dataclass(frozen=True)
class Operator:
    name: str
    arity: int
    protected: bool
    symbol: str | None  # infix symbol for binary operators, None for function-style
    fn: Callable[..., np.ndarray]


def _div(a, b):
    return a / np.abs(b)


def _sqrt(a):
    return np.sqrt(np.abs(a))


def _lt(a, b):
    return (a < b).astype(np.float64)


def _gt(a, b):
    return (a > b).astype(np.float64)


OPERATORS: tuple[Operator, ...] = (
    Operator("add", 2, False, "+", np.add),
    Operator("sub", 2, False, "-", np.subtract),
    Operator("mul", 2, False, "*", np.multiply),
    Operator("div", 2, True, "/", _div),
    Operator("abs", 1, False, None, np.abs),
    Operator("exp", 1, False, None, np.exp),
    Operator("sin", 1, False, None, np.sin),
    Operator("cos", 1, False, None, np.cos),
    Operator("log", 1, False, None, np.log),
    Operator("sqrt", 1, True, None, _sqrt),
    Operator("lt", 2, False, "<", _lt),
    Operator("gt", 2, False, ">", _gt),
)

N_OPERATORS = len(OPERATORS)
OP_INDEX = {op.name: i for i, op in enumerate(OPERATORS)}
BOOLEAN_OPS = frozenset({"lt", "gt"})


def _finite_or_zero(x: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(x), x, 0.0)


def apply_array(op: int | str, a, b=None) -> np.ndarray:
    """Vectorised, totalised operator application.

    Unary operators ignore ``b``. Any NaN or infinite result becomes 0.0.
    """
    idx = OP_INDEX[op] if isinstance(op, str) else op
    spec = OPERATORS[idx]
    a = np.asarray(a, dtype=np.float64)
    with np.errstate(all="ignore"):
        if spec.arity == 1:
            out = spec.fn(a)
        else:
            out = spec.fn(a, np.asarray(b, dtype=np.float64))
    return _finite_or_zero(out)


def apply_operator(op: int | str, a: float, b: float = 0.0) -> float:
    """Scalar form of :func:`apply_array`.

    >>> apply_operator("sqrt", -4.0)
    2.0
    >>> apply_operator("div", 1.0, 0.0)
    0.0
    """
    return float(apply_array(op, a, b))
