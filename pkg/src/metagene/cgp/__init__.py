"""Cartesian genetic programming over the distance-function operator set."""

from metagene.cgp.expr import (
    Const,
    Expr,
    ExpressionSyntaxError,
    Op,
    Var,
    evaluate,
    parse,
    simplify,
    to_expression,
    to_genome,
    to_infix,
)
from metagene.cgp.genome import (
    CONSTANTS,
    DEFAULT_N_NODES,
    INPUT_NAMES,
    N_INPUTS,
    CgpGenome,
    InvalidGenomeError,
    active_nodes,
    dumps,
    eval_genome,
    loads,
    mutate,
    random_genome,
    to_dot,
    used_coordinate_inputs,
    used_inputs,
    validate,
)
from metagene.cgp.operators import OPERATORS, apply_array, apply_operator

__all__ = [
    "CONSTANTS",
    "DEFAULT_N_NODES",
    "INPUT_NAMES",
    "N_INPUTS",
    "OPERATORS",
    "CgpGenome",
    "Const",
    "Expr",
    "ExpressionSyntaxError",
    "InvalidGenomeError",
    "Op",
    "Var",
    "active_nodes",
    "apply_array",
    "apply_operator",
    "dumps",
    "eval_genome",
    "evaluate",
    "loads",
    "mutate",
    "parse",
    "random_genome",
    "simplify",
    "to_dot",
    "to_expression",
    "to_genome",
    "to_infix",
    "used_coordinate_inputs",
    "used_inputs",
    "validate",
]
