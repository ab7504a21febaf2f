"""Single-row Cartesian genetic programming genome with unrestricted levels-back.

Address space seen by connection genes and the output gene::

    0..5   coordinate inputs x1, y1, z1, x2, y2, z2
    6      constant 0.1
    7      constant 1.0
    8+k    internal node k (k = 0..n_nodes-1)

Node k may only read addresses < 8 + k, which makes every genome feed-forward.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from metagene.cgp.operators import N_OPERATORS, OPERATORS, apply_array

INPUT_NAMES = ("x1", "y1", "z1", "x2", "y2", "z2")
CONSTANTS = (0.1, 1.0)
N_COORDS = len(INPUT_NAMES)
N_INPUTS = N_COORDS + len(CONSTANTS)
DEFAULT_N_NODES = 64


class InvalidGenomeError(ValueError):
    pass


@dataclass(frozen=True)
class CgpGenome:
    fns: tuple[int, ...]
    in1: tuple[int, ...]
    in2: tuple[int, ...]
    output: int

    def __post_init__(self):
        object.__setattr__(self, "fns", tuple(int(v) for v in self.fns))
        object.__setattr__(self, "in1", tuple(int(v) for v in self.in1))
        object.__setattr__(self, "in2", tuple(int(v) for v in self.in2))
        object.__setattr__(self, "output", int(self.output))
        validate(self)

    @property
    def n_nodes(self) -> int:
        return len(self.fns)


def validate(g: CgpGenome) -> None:
    n = len(g.fns)
    if n == 0 or len(g.in1) != n or len(g.in2) != n:
        raise InvalidGenomeError("node gene lists must be non-empty and of equal length")
    for k in range(n):
        if not 0 <= g.fns[k] < N_OPERATORS:
            raise InvalidGenomeError(f"node {k}: function index {g.fns[k]} out of range")
        limit = N_INPUTS + k
        for name, src in (("in1", g.in1[k]), ("in2", g.in2[k])):
            if not 0 <= src < limit:
                raise InvalidGenomeError(
                    f"node {k}: {name}={src} violates feed-forward order (must be < {limit})"
                )
    if not 0 <= g.output < N_INPUTS + n:
        raise InvalidGenomeError(f"output gene {g.output} out of range")


def random_genome(rng: np.random.Generator, n_nodes: int = DEFAULT_N_NODES) -> CgpGenome:
    limits = N_INPUTS + np.arange(n_nodes)
    fns = rng.integers(0, N_OPERATORS, size=n_nodes)
    in1 = rng.integers(0, limits)
    in2 = rng.integers(0, limits)
    out = rng.integers(0, N_INPUTS + n_nodes)
    return CgpGenome(tuple(fns), tuple(in1), tuple(in2), int(out))


def mutate(
    g: CgpGenome, rng: np.random.Generator, p_fn: float = 0.15, p_in: float = 0.15
) -> CgpGenome:
    """Point mutation: every gene is independently resampled from its legal range.

    The same number of random draws is consumed whatever the probabilities, so
    offspring streams stay aligned across configurations.
    """
    if not (0.0 <= p_fn <= 1.0 and 0.0 <= p_in <= 1.0):
        raise ValueError("mutation probabilities must lie in [0, 1]")
    n = g.n_nodes
    limits = N_INPUTS + np.arange(n)

    fns = np.array(g.fns)
    in1 = np.array(g.in1)
    in2 = np.array(g.in2)

    fn_mask = rng.random(n) < p_fn
    fn_new = rng.integers(0, N_OPERATORS, size=n)
    in1_mask = rng.random(n) < p_in
    in1_new = rng.integers(0, limits)
    in2_mask = rng.random(n) < p_in
    in2_new = rng.integers(0, limits)
    out_mask = rng.random() < p_in
    out_new = rng.integers(0, N_INPUTS + n)

    fns = np.where(fn_mask, fn_new, fns)
    in1 = np.where(in1_mask, in1_new, in1)
    in2 = np.where(in2_mask, in2_new, in2)
    out = int(out_new) if out_mask else g.output
    return CgpGenome(tuple(fns), tuple(in1), tuple(in2), out)


def node_sources(g: CgpGenome, k: int) -> tuple[int, ...]:
    """Addresses actually read by node ``k`` (unary operators ignore in2)."""
    if OPERATORS[g.fns[k]].arity == 1:
        return (g.in1[k],)
    return (g.in1[k], g.in2[k])


def active_nodes(g: CgpGenome) -> set[int]:
    """Positions of the nodes reachable backwards from the output gene."""
    active: set[int] = set()
    stack = [g.output]
    while stack:
        addr = stack.pop()
        if addr < N_INPUTS:
            continue
        k = addr - N_INPUTS
        if k in active:
            continue
        active.add(k)
        stack.extend(node_sources(g, k))
    return active


def used_inputs(g: CgpGenome) -> set[int]:
    """All input addresses (coordinates and constants) read by the active graph."""
    used = set()
    if g.output < N_INPUTS:
        used.add(g.output)
    for k in active_nodes(g):
        used.update(a for a in node_sources(g, k) if a < N_INPUTS)
    return used


def used_coordinate_inputs(g: CgpGenome) -> set[int]:
    return {a for a in used_inputs(g) if a < N_COORDS}


def input_columns(coords) -> list[np.ndarray]:
    """Contiguous per-coordinate arrays plus 0-d constants, in address order."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != N_COORDS:
        raise ValueError(f"expected trailing dimension {N_COORDS}, got {coords.shape}")
    cols = [np.array(coords[..., i], order="C") for i in range(N_COORDS)]
    return cols + [np.float64(c) for c in CONSTANTS]


def evaluate_columns(g: CgpGenome, cols: list[np.ndarray]) -> np.ndarray:
    values: dict[int, np.ndarray] = dict(enumerate(cols))
    for k in sorted(active_nodes(g)):
        fn = g.fns[k]
        a = values[g.in1[k]]
        b = values[g.in2[k]] if OPERATORS[fn].arity == 2 else None
        values[N_INPUTS + k] = apply_array(fn, a, b)
    shape = np.broadcast_shapes(*(np.shape(c) for c in cols[:N_COORDS]))
    return np.broadcast_to(values[g.output], shape).astype(np.float64, copy=True)


def eval_genome(g: CgpGenome, coords):
    """Evaluate on coordinates ``[x1, y1, z1, x2, y2, z2]``; accepts batches (..., 6)."""
    out = evaluate_columns(g, input_columns(coords))
    return float(out) if out.ndim == 0 else out


# --- CGPv1 text format -------------------------------------------------------

_HEADER = re.compile(r"^CGPv1;\s*nodes=(\d+);\s*(.*?);\s*out=(\d+)\s*$", re.S)


def dumps(g: CgpGenome) -> str:
    nodes = " ".join(f"{f},{a},{b}" for f, a, b in zip(g.fns, g.in1, g.in2))
    return f"CGPv1; nodes={g.n_nodes}; {nodes}; out={g.output}"


def loads(text: str) -> CgpGenome:
    m = _HEADER.match(text.strip())
    if not m:
        raise InvalidGenomeError("not a CGPv1 genome record")
    n = int(m.group(1))
    triples = m.group(2).split()
    if len(triples) != n:
        raise InvalidGenomeError(f"header declares {n} nodes, found {len(triples)}")
    fns, in1, in2 = [], [], []
    for t in triples:
        try:
            f, a, b = (int(v) for v in t.split(","))
        except ValueError as exc:
            raise InvalidGenomeError(f"malformed node gene {t!r}") from exc
        fns.append(f)
        in1.append(a)
        in2.append(b)
    return CgpGenome(tuple(fns), tuple(in1), tuple(in2), int(m.group(3)))


# --- DOT export ---------------------------------------------------------------

def _input_label(addr: int) -> str:
    if addr < N_COORDS:
        return INPUT_NAMES[addr]
    return repr(CONSTANTS[addr - N_COORDS])


def to_dot(g: CgpGenome, name: str = "cgp") -> str:
    """Graphviz description of the active subgraph.

    Node ids are prefixed by class: ``in`` for inputs, ``op`` for operator
    nodes, and a single ``out`` node.
    """
    active = sorted(active_nodes(g))
    inputs = sorted(used_inputs(g))
    lines = [f'digraph "{name}" {{', "  rankdir=LR;"]
    for a in inputs:
        color = "red" if a < 3 else ("orange" if a < N_COORDS else "gray")
        lines.append(
            f'  in{a} [label="{_input_label(a)}", shape=box, style=filled, fillcolor={color}];'
        )
    for k in active:
        lines.append(
            f'  op{k} [label="{OPERATORS[g.fns[k]].name}", shape=ellipse, style=filled, '
            "fillcolor=lightblue];"
        )
    lines.append('  out [label="out", shape=doublecircle, style=filled, fillcolor=green];')

    def ref(addr: int) -> str:
        return f"in{addr}" if addr < N_INPUTS else f"op{addr - N_INPUTS}"

    for k in active:
        srcs = node_sources(g, k)
        for port, src in enumerate(srcs, start=1):
            label = f' [label="{port}"]' if len(srcs) == 2 else ""
            lines.append(f"  {ref(src)} -> op{k}{label};")
    lines.append(f"  {ref(g.output)} -> out;")
    lines.append("}")
    return "\n".join(lines) + "\n"
