"""Symbolic expression trees extracted from CGP genomes.

Trees print as plain-text infix in which every binary sub-expression is
parenthesised, so ``parse(to_infix(e)) == e`` holds for every tree.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from metagene.cgp.genome import (
    CONSTANTS,
    INPUT_NAMES,
    N_INPUTS,
    CgpGenome,
    input_columns,
    node_sources,
)
from metagene.cgp.operators import BOOLEAN_OPS, OP_INDEX, OPERATORS, apply_array


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Op:
    name: str
    args: tuple["Expr", ...]


Expr = Union[Var, Const, Op]

_SYMBOL_TO_OP = {op.symbol: op.name for op in OPERATORS if op.symbol}
_UNARY_NAMES = {op.name for op in OPERATORS if op.arity == 1}


def to_expression(g: CgpGenome) -> Expr:
    memo: dict[int, Expr] = {}

    def build(addr: int) -> Expr:
        if addr in memo:
            return memo[addr]
        if addr < len(INPUT_NAMES):
            e: Expr = Var(INPUT_NAMES[addr])
        elif addr < N_INPUTS:
            e = Const(CONSTANTS[addr - len(INPUT_NAMES)])
        else:
            k = addr - N_INPUTS
            name = OPERATORS[g.fns[k]].name
            e = Op(name, tuple(build(a) for a in node_sources(g, k)))
        memo[addr] = e
        return e

    return build(g.output)


def evaluate(e: Expr, coords):
    """Evaluate on ``[x1, y1, z1, x2, y2, z2]`` coordinates, batched like ``eval_genome``."""
    cols = input_columns(coords)
    out = evaluate_columns(e, cols)
    shape = np.broadcast_shapes(*(np.shape(c) for c in cols[: len(INPUT_NAMES)]))
    out = np.broadcast_to(out, shape).astype(np.float64, copy=True)
    return float(out) if out.ndim == 0 else out


def evaluate_columns(e: Expr, cols: list[np.ndarray]) -> np.ndarray:
    if isinstance(e, Var):
        return cols[INPUT_NAMES.index(e.name)]
    if isinstance(e, Const):
        return np.float64(e.value)
    args = [evaluate_columns(a, cols) for a in e.args]
    return apply_array(e.name, *args)


def variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    return set().union(*(variables(a) for a in e.args))


def size(e: Expr) -> int:
    """Number of operator nodes in the tree."""
    if isinstance(e, Op):
        return 1 + sum(size(a) for a in e.args)
    return 0


# --- printing and parsing --------------------------------------------------------

def to_infix(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Const):
        return repr(float(e.value))
    op = OPERATORS[OP_INDEX[e.name]]
    if op.arity == 1:
        return f"{e.name}({to_infix(e.args[0])})"

    def wrap(a: Expr) -> str:
        s = to_infix(a)
        if isinstance(a, Op) and OPERATORS[OP_INDEX[a.name]].arity == 2:
            return f"({s})"
        return s

    return f"{wrap(e.args[0])} {op.symbol} {wrap(e.args[1])}"


class ExpressionSyntaxError(ValueError):
    pass


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<sym>[-+*/<>()]))"
)

# lower binds looser
_PRECEDENCE = {"<": 1, ">": 1, "+": 2, "-": 2, "*": 3, "/": 3}


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self, value: str | None = None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ExpressionSyntaxError(f"expected {value or 'token'}, got {tok[1]!r}")
        self.i += 1
        return tok

    def expression(self, min_prec: int = 1) -> Expr:
        lhs = self.atom()
        while True:
            kind, val = self.peek()
            if kind != "sym" or val not in _PRECEDENCE or _PRECEDENCE[val] < min_prec:
                return lhs
            self.take()
            rhs = self.expression(_PRECEDENCE[val] + 1)
            lhs = Op(_SYMBOL_TO_OP[val], (lhs, rhs))

    def atom(self) -> Expr:
        kind, val = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "sym" and val == "-":
            nk, nv = self.peek()
            if nk == "num":
                self.take()
                return Const(-float(nv))
            raise ExpressionSyntaxError("unary minus is only supported on numeric literals")
        if kind == "sym" and val == "(":
            e = self.expression()
            self.take(")")
            return e
        if kind == "name":
            if val in _UNARY_NAMES:
                self.take("(")
                arg = self.expression()
                self.take(")")
                return Op(val, (arg,))
            if val in INPUT_NAMES:
                return Var(val)
            raise ExpressionSyntaxError(f"unknown name {val!r}")
        raise ExpressionSyntaxError(f"unexpected token {val!r}")


def parse(text: str) -> Expr:
    """Parse infix text. ``<``/``>`` bind loosest, then ``+ -``, then ``* /``."""
    p = _Parser(text)
    e = p.expression()
    if p.i != len(p.tokens):
        raise ExpressionSyntaxError(f"trailing input after token {p.i}: {p.tokens[p.i][1]!r}")
    return e


# --- simplification ------------------------------------------------------------

def _is_boolean(e: Expr) -> bool:
    return isinstance(e, Op) and e.name in BOOLEAN_OPS


def _is_one(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 1.0


def simplify(e: Expr) -> Expr:
    """Value-preserving rewrites: boolean sqrt/abs removal, constant folding, x*1, x/1."""
    if not isinstance(e, Op):
        return e
    args = tuple(simplify(a) for a in e.args)
    if all(isinstance(a, Const) for a in args):
        value = apply_array(e.name, *(np.float64(a.value) for a in args))
        return Const(float(value))
    if e.name in ("sqrt", "abs") and _is_boolean(args[0]):
        return args[0]
    if e.name == "mul":
        if _is_one(args[1]):
            return args[0]
        if _is_one(args[0]):
            return args[1]
    if e.name == "div" and _is_one(args[1]):
        return args[0]
    return Op(e.name, args)


# --- compilation back to a genome --------------------------------------------------

def to_genome(e: Expr, n_nodes: int = 64) -> CgpGenome:
    """Compile a tree into a genome; identical sub-trees share one node.

    Only the constants 0.1 and 1.0 are addressable. Unused nodes are inactive
    ``add(x1, x1)`` fillers.
    """
    fns: list[int] = []
    in1: list[int] = []
    in2: list[int] = []
    memo: dict[Expr, int] = {}

    def emit(node: Expr) -> int:
        if node in memo:
            return memo[node]
        if isinstance(node, Var):
            addr = INPUT_NAMES.index(node.name)
        elif isinstance(node, Const):
            if node.value not in CONSTANTS:
                raise ValueError(f"constant {node.value!r} is not an addressable CGP input")
            addr = len(INPUT_NAMES) + CONSTANTS.index(node.value)
        else:
            srcs = [emit(a) for a in node.args]
            fns.append(OP_INDEX[node.name])
            in1.append(srcs[0])
            in2.append(srcs[1] if len(srcs) == 2 else 0)
            addr = N_INPUTS + len(fns) - 1
        memo[node] = addr
        return addr

    out = emit(e)
    if len(fns) > n_nodes:
        raise ValueError(f"expression needs {len(fns)} nodes, genome holds {n_nodes}")
    pad = n_nodes - len(fns)
    return CgpGenome(
        tuple(fns) + (0,) * pad, tuple(in1) + (0,) * pad, tuple(in2) + (0,) * pad, out
    )
