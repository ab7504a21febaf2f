"""Genome-to-network mappings: GENE geometric encoding and direct encoding.

GENE genome layout (length ``d * N + B``)::

    [pos(neuron 0), ..., pos(neuron N-1), bias(first hidden neuron), ..., bias(last output)]

Neurons are ordered inputs, hidden layers in order, outputs. Each position
is ``d`` consecutive values. The weight from neuron i in layer l to neuron j
in layer l+1 is ``f(pos_i, pos_j)``.

Direct genome layout: for each layer in order, the (fan_out, fan_in) weight
matrix in row-major order, then that layer's bias vector.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from metagene import cgp
from metagene.cgp import apply_array as _op
from metagene.network import DimensionError, NetworkPhenotype

DEFAULT_D = 3


class UnknownDistanceError(KeyError):
    pass


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min(self.layer_sizes) < 1:
            raise ValueError(f"all layer sizes must be >= 1, got {self.layer_sizes}")

    @classmethod
    def parse(cls, text: str) -> "Architecture":
        """``"18,128,128,6"`` -> inputs 18, hidden [128, 128], outputs 6."""
        sizes = [int(s) for s in text.replace(" ", "").split(",") if s]
        if len(sizes) < 2:
            raise ValueError("architecture needs at least input and output sizes")
        return cls(sizes[0], tuple(sizes[1:-1]), sizes[-1])

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def n_neurons(self) -> int:
        return sum(self.layer_sizes)

    @property
    def n_biases(self) -> int:
        return sum(self.layer_sizes[1:])

    @property
    def n_weights(self) -> int:
        s = self.layer_sizes
        return sum(a * b for a, b in zip(s[:-1], s[1:]))

    def __str__(self) -> str:
        return ",".join(str(s) for s in self.layer_sizes)


def genome_size_direct(arch: Architecture) -> int:
    return arch.n_weights + arch.n_biases


def genome_size_gene(arch: Architecture, d: int = DEFAULT_D) -> int:
    if d < 1:
        raise ValueError("latent dimension must be >= 1")
    return d * arch.n_neurons + arch.n_biases


def size_ratio(arch: Architecture, d: int = DEFAULT_D) -> int:
    """direct / GENE genome size, rounded to the nearest integer (halves up)."""
    direct, gene = genome_size_direct(arch), genome_size_gene(arch, d)
    return (2 * direct + gene) // (2 * gene)


# --- hand-crafted distances ------------------------------------------------------

def alpha_clamp(x):
    """Identity on (-1, 1), saturating at +-1."""
    out = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _diffs(n1, n2) -> list[np.ndarray]:
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    if n1.shape[-1] != n2.shape[-1]:
        raise DimensionError("latent positions must share a dimension")
    diff = n1 - n2
    return [diff[..., i] for i in range(diff.shape[-1])]


def _sum_sq(diffs: list[np.ndarray]) -> np.ndarray:
    # sequential left-to-right accumulation; CGP graphs reproduce the same order
    acc = diffs[0] * diffs[0]
    for v in diffs[1:]:
        acc = acc + v * v
    return acc


def _l2(n1, n2):
    return np.sqrt(_sum_sq(_diffs(n1, n2)))


def _pl2(n1, n2):
    diffs = _diffs(n1, n2)
    prod = diffs[0]
    for v in diffs[1:]:
        prod = prod * v
    with np.errstate(all="ignore"):
        return np.clip(prod, -1.0, 1.0) * np.sqrt(_sum_sq(diffs))


def d_l2(n1, n2):
    out = _finite(_l2(n1, n2))
    return float(out) if out.ndim == 0 else out


def d_pl2(n1, n2):
    out = _finite(_pl2(n1, n2))
    return float(out) if out.ndim == 0 else out


# --- learned distances, written with the CGP operator semantics -----------------

_C01 = np.float64(0.1)
_C1 = np.float64(1.0)


def _xyz(n1, n2):
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    if n1.shape[-1] != 3 or n2.shape[-1] != 3:
        raise DimensionError("learned distances are defined on 3-d latent positions")
    cols = [np.array(n[..., i], order="C") for n in (n1, n2) for i in range(3)]
    return cols


def _ld10(n1, n2):
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    return x2


def _ld79(n1, n2):
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    return _op("sin", _op("mul", _op("exp", z1), y2))


def _ld204(n1, n2):
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    left = _op("gt", _op("sub", z2, x1), z2)
    right = _op("sub", z2, _op("gt", _op("sub", z2, x1), _C01))
    gate = _op("lt", _op("add", left, right), _op("abs", z2))
    return _op("sin", _op("mul", gate, y2))


def _ld206(n1, n2):
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    return _op("sin", _op("mul", _op("abs", _op("gt", z2, x1)), y2))


def _ld318(n1, n2):
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    return _op("mul", _op("abs", _op("gt", z2, x1)), y2)


def _ld352(n1, n2):
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    return _op("mul", _op("sqrt", _op("gt", z2, x1)), y2)


def _ld367(n1, n2):
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    return _op("mul", _op("sqrt", _op("gt", x2, z1)), y2)


def _ld376(n1, n2):
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    return _op("mul", _op("div", _op("gt", x2, x1), _C1), y2)


def _ld573(n1, n2):
    # chained comparisons read left-associatively
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    lhs = _op("mul", _C1, z2)
    mid = _op("sub", _op("sub", x2, _op("mul", _C1, x1)), _op("cos", x2))
    rhs = _op("mul", _C01, _op("lt", _op("lt", _C1, _op("abs", z1)), z2))
    return _op("lt", _op("lt", lhs, mid), rhs)


def _ld626(n1, n2):
    x1, y1, z1, x2, y2, z2 = _xyz(n1, n2)
    return _op("mul", _op("sin", _op("lt", x2, x1)), y2)


# Infix forms as printed in the learned-distance catalogue; the genomes for
# these ids are compiled from the strings, the closed forms above are written
# independently.
LEARNED_EXPRESSIONS: dict[str, str] = {
    "LD-10": "x2",
    "LD-79": "sin(exp(z1) * y2)",
    "LD-204": "sin(((((z2 - x1) > z2) + (z2 - ((z2 - x1) > 0.1))) < abs(z2)) * y2)",
    "LD-206": "sin(abs(z2 > x1) * y2)",
    "LD-318": "abs(z2 > x1) * y2",
    "LD-352": "sqrt(z2 > x1) * y2",
    "LD-367": "sqrt(x2 > z1) * y2",
    "LD-376": "((x2 > x1) / 1) * y2",
    "LD-573": "((1 * z2) < ((x2 - (1 * x1) - cos(x2)))) < (0.1 * ((1 < abs(z1)) < z2))",
    "LD-626": "sin(x2 < x1) * y2",
}

_LEARNED: dict[str, Callable] = {
    "LD-10": _ld10,
    "LD-79": _ld79,
    "LD-204": _ld204,
    "LD-206": _ld206,
    "LD-318": _ld318,
    "LD-352": _ld352,
    "LD-367": _ld367,
    "LD-376": _ld376,
    "LD-573": _ld573,
    "LD-626": _ld626,
}

LEARNED_IDS = tuple(LEARNED_EXPRESSIONS)


def pl2_expression() -> cgp.Expr:
    """pL2 over d = 3 using only the CGP operator set.

    -1 is built as (1 - 1) - 1 and the clamp as
    ``((1 - [p < 1]) - (1 - [-1 < p])) + ([p < 1] * [-1 < p]) * p``.
    """
    V, C = cgp.Var, cgp.Const

    def op(name, *args):
        return cgp.Op(name, args)

    dx, dy, dz = (op("sub", V(a), V(b)) for a, b in (("x1", "x2"), ("y1", "y2"), ("z1", "z2")))
    prod = op("mul", op("mul", dx, dy), dz)
    one = C(1.0)
    minus_one = op("sub", op("sub", one, one), one)
    below = op("lt", prod, one)
    above = op("lt", minus_one, prod)
    sign = op("sub", op("sub", one, below), op("sub", one, above))
    clamp = op("add", sign, op("mul", op("mul", below, above), prod))
    sq = op("add", op("add", op("mul", dx, dx), op("mul", dy, dy)), op("mul", dz, dz))
    return op("mul", clamp, op("sqrt", sq))


def d_learned(ld_id: str, n1, n2):
    key = normalize_ld_id(ld_id)
    out = _finite(np.broadcast_to(_LEARNED[key](n1, n2), _batch_shape(n1, n2)))
    return float(out) if out.ndim == 0 else out


def normalize_ld_id(ld_id: str) -> str:
    text = str(ld_id).strip().upper()
    if text.startswith("LD:"):
        text = text[3:]
    key = text if text.startswith("LD-") else f"LD-{text}"
    if key not in _LEARNED:
        raise UnknownDistanceError(f"unknown learned distance {ld_id!r}; known: {', '.join(LEARNED_IDS)}")
    return key


@functools.lru_cache(maxsize=None)
def learned_genome(ld_id: str) -> cgp.CgpGenome:
    return cgp.to_genome(cgp.parse(LEARNED_EXPRESSIONS[normalize_ld_id(ld_id)]))


@functools.lru_cache(maxsize=None)
def pl2_genome() -> cgp.CgpGenome:
    return cgp.to_genome(pl2_expression())


# --- distance-function objects -----------------------------------------------------

def _finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.isfinite(x), x, 0.0)


def _batch_shape(n1, n2) -> tuple[int, ...]:
    return np.broadcast_shapes(np.shape(n1)[:-1], np.shape(n2)[:-1])


def _genome_fn(genome: cgp.CgpGenome, n1, n2):
    a, b = np.broadcast_arrays(np.asarray(n1, dtype=np.float64), np.asarray(n2, dtype=np.float64))
    return cgp.eval_genome(genome, np.concatenate([a, b], axis=-1))


def _expr_fn(expr: cgp.Expr, n1, n2):
    a, b = np.broadcast_arrays(np.asarray(n1, dtype=np.float64), np.asarray(n2, dtype=np.float64))
    return cgp.evaluate(expr, np.concatenate([a, b], axis=-1))


@dataclass(frozen=True)
class DistanceFunction:
    """Weight generator ``f(pre_position, post_position) -> weight``.

    Inputs broadcast over leading dimensions; non-finite outputs become 0.
    """

    name: str
    fn: Callable = field(repr=False)
    latent_dim: int | None = None  # None: any dimension
    genome: cgp.CgpGenome | None = field(default=None, repr=False, compare=False)

    def __call__(self, n1, n2):
        out = _finite(np.broadcast_to(self.fn(n1, n2), _batch_shape(n1, n2)))
        return float(out) if out.ndim == 0 else out

    @property
    def expression(self) -> cgp.Expr | None:
        if self.genome is not None:
            return cgp.to_expression(self.genome)
        if self.name in LEARNED_EXPRESSIONS:
            return cgp.parse(LEARNED_EXPRESSIONS[self.name])
        return None


L2 = DistanceFunction("L2", _l2)
PL2 = DistanceFunction("pL2", _pl2)


def learned(ld_id: str) -> DistanceFunction:
    key = normalize_ld_id(ld_id)
    return DistanceFunction(key, _LEARNED[key], 3, learned_genome(key))


def from_genome(genome: cgp.CgpGenome, name: str = "cgp") -> DistanceFunction:
    return DistanceFunction(name, functools.partial(_genome_fn, genome), 3, genome)


def from_expression(expr: cgp.Expr | str, name: str | None = None) -> DistanceFunction:
    if isinstance(expr, str):
        expr = cgp.parse(expr)
    return DistanceFunction(name or cgp.to_infix(expr), functools.partial(_expr_fn, expr), 3)


def resolve_distance(spec: str) -> DistanceFunction:
    """``l2 | pl2 | ld:<id> | LD-<id> | cgp:<file> | expr:<infix>``."""
    text = spec.strip()
    low = text.lower()
    if low == "l2":
        return L2
    if low == "pl2":
        return PL2
    if low.startswith("ld:") or low.startswith("ld-"):
        return learned(text)
    if low.startswith("cgp:"):
        path = Path(text[4:])
        return from_genome(cgp.loads(path.read_text()), name=path.stem)
    if low.startswith("expr:"):
        return from_expression(text[5:])
    raise UnknownDistanceError(f"unknown distance function {spec!r}")


# --- decoding -------------------------------------------------------------------

def _check_length(genomes: np.ndarray, expected: int) -> None:
    if genomes.shape[-1] != expected:
        raise DimensionError(f"genome length {genomes.shape[-1]} != expected {expected}")


def decode_gene(genome, arch: Architecture, f: DistanceFunction, d: int = DEFAULT_D) -> NetworkPhenotype:
    """GENE decoding; ``genome`` may be (L,) or a population (P, L)."""
    g = np.asarray(genome, dtype=np.float64)
    _check_length(g, genome_size_gene(arch, d))
    if f.latent_dim is not None and f.latent_dim != d:
        raise DimensionError(f"distance {f.name} needs d={f.latent_dim}, encoding uses d={d}")
    n = arch.n_neurons
    pos = g[..., : d * n].reshape(g.shape[:-1] + (n, d))
    bias_flat = g[..., d * n:]
    sizes = arch.layer_sizes
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    weights, biases = [], []
    b_off = 0
    for layer in range(len(sizes) - 1):
        pre = pos[..., offsets[layer]:offsets[layer + 1], :]
        post = pos[..., offsets[layer + 1]:offsets[layer + 2], :]
        w = f(pre[..., None, :, :], post[..., :, None, :])
        weights.append(np.asarray(w, dtype=np.float64).reshape(g.shape[:-1] + (sizes[layer + 1], sizes[layer])))
        biases.append(np.array(bias_flat[..., b_off:b_off + sizes[layer + 1]]))
        b_off += sizes[layer + 1]
    return NetworkPhenotype(tuple(weights), tuple(biases))


def decode_direct(genome, arch: Architecture) -> NetworkPhenotype:
    g = np.asarray(genome, dtype=np.float64)
    _check_length(g, genome_size_direct(arch))
    sizes = arch.layer_sizes
    weights, biases = [], []
    off = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        nw = fan_in * fan_out
        weights.append(np.array(g[..., off:off + nw]).reshape(g.shape[:-1] + (fan_out, fan_in)))
        off += nw
        biases.append(np.array(g[..., off:off + fan_out]))
        off += fan_out
    return NetworkPhenotype(tuple(weights), tuple(biases))


def flatten_direct(net: NetworkPhenotype) -> np.ndarray:
    """Inverse of :func:`decode_direct`."""
    batch = net.batch_shape
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.reshape(batch + (-1,)))
        parts.append(b)
    return np.concatenate(parts, axis=-1)


# --- encodings as used by the optimiser ---------------------------------------------

@dataclass(frozen=True)
class DirectEncoding:
    arch: Architecture
    name: str = "direct"

    @property
    def size(self) -> int:
        return genome_size_direct(self.arch)

    def decode(self, genomes) -> NetworkPhenotype:
        return decode_direct(genomes, self.arch)


@dataclass(frozen=True)
class GeneEncoding:
    arch: Architecture
    distance: DistanceFunction
    d: int = DEFAULT_D

    @property
    def name(self) -> str:
        return self.distance.name

    @property
    def size(self) -> int:
        return genome_size_gene(self.arch, self.d)

    def decode(self, genomes) -> NetworkPhenotype:
        return decode_gene(genomes, self.arch, self.distance, self.d)


Encoding = DirectEncoding | GeneEncoding


def resolve_encoding(spec: str, arch: Architecture, d: int = DEFAULT_D) -> Encoding:
    if spec.strip().lower() == "direct":
        return DirectEncoding(arch)
    return GeneEncoding(arch, resolve_distance(spec), d)
