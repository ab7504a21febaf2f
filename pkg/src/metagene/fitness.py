"""Meta-fitness components for candidate distance functions.

``F = beta * f_task - (1 - beta) * f_prop + alpha * f_input`` where
``f_prop = f_mean + f_std + f_sym``. Defaults: beta = 1/3, alpha = 4 * beta.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from metagene import cgp
from metagene.encoding import DEFAULT_D, Architecture, DistanceFunction, decode_gene, genome_size_gene
from metagene.network import DimensionError, NetworkPhenotype, forward

BETA = 1.0 / 3.0
ALPHA = 4.0 * BETA
TARGET_STD = 0.5


class ProtocolError(ValueError):
    pass


def minmax_normalize(values: Sequence[float]) -> np.ndarray:
    """(v - min) / (max - min); a constant input maps to 0.5 everywhere."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot normalise an empty sequence")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def f_task(scores) -> np.ndarray:
    """Per-candidate sum of per-environment min-max normalised scores.

    ``scores`` is (n_candidates, n_envs); normalisation runs down each column.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2:
        raise ProtocolError("scores must be a (candidates, environments) table")
    if not np.all(np.isfinite(s)):
        raise ProtocolError("every candidate needs a finite score on every training environment")
    return np.sum([minmax_normalize(col) for col in s.T], axis=0)


def _weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("weight set is empty")
    return w


def f_mean(weights) -> float:
    return float(abs(np.mean(_weights(weights))))


def f_std(weights) -> float:
    return float((np.std(_weights(weights)) - TARGET_STD) ** 2)


def _sym_batch(net: NetworkPhenotype, samples: np.ndarray) -> np.ndarray:
    # net batched over G, samples (G, S, in) -> one penalty per network
    expanded = NetworkPhenotype(
        tuple(w[..., None, :, :] for w in net.weights),
        tuple(b[..., None, :] for b in net.biases),
    )
    out = forward(expanded, samples)
    axes = tuple(range(-2, 0))
    return np.abs(out.mean(axis=axes) - samples.mean(axis=axes))


def f_sym(net: NetworkPhenotype, samples) -> float:
    """|grand mean of outputs - grand mean of inputs| over the sample batch."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if x.shape[-1] != net.input_dim:
        raise DimensionError(f"samples have {x.shape[-1]} features, network expects {net.input_dim}")
    if len(x) < 1:
        raise ValueError("need at least one sample")
    return float(abs(np.mean(forward(net, x)) - np.mean(x)))


def evaluate_properties(
    f: DistanceFunction,
    arch: Architecture,
    n_genomes: int = 32,
    n_samples: int = 128,
    rng: np.random.Generator | None = None,
    d: int = DEFAULT_D,
) -> tuple[float, float, float]:
    """Average (f_mean, f_std, f_sym) over standard-normal GENE genomes decoded with ``f``."""
    if n_genomes < 1 or n_samples < 1:
        raise ValueError("need at least one genome and one sample")
    rng = rng if rng is not None else np.random.default_rng(0)
    genomes = rng.standard_normal((n_genomes, genome_size_gene(arch, d)))
    samples = rng.standard_normal((n_genomes, n_samples, arch.input_dim))
    nets = decode_gene(genomes, arch, f, d)
    w = np.concatenate([m.reshape(n_genomes, -1) for m in nets.weights], axis=1)
    means = np.abs(w.mean(axis=1))
    stds = (w.std(axis=1) - TARGET_STD) ** 2
    syms = _sym_batch(nets, samples)
    return float(means.mean()), float(stds.mean()), float(syms.mean())


def f_input(g: cgp.CgpGenome | cgp.Expr) -> float:
    """Fraction of the six coordinate inputs the function reads."""
    if isinstance(g, cgp.CgpGenome):
        n = len(cgp.used_coordinate_inputs(g))
    else:
        n = len(cgp.expr.variables(g))
    return n / len(cgp.INPUT_NAMES)


def combine(task: float, prop: float, inputs: float, beta: float = BETA, alpha: float = ALPHA) -> float:
    return beta * task - (1.0 - beta) * prop + alpha * inputs


@dataclass(frozen=True)
class FitnessBreakdown:
    """All fitness terms of one candidate.

    ``raw`` holds the best inner-loop reward per training environment.
    ``normalized``, ``f_task`` and ``F`` stay empty until the generation's
    population is known (see :func:`complete`).
    """

    raw: dict[str, float]
    f_mean: float
    f_std: float
    f_sym: float
    f_input: float
    normalized: dict[str, float] = field(default_factory=dict)
    f_task: float | None = None
    F: float | None = None

    @property
    def f_prop(self) -> float:
        return self.f_mean + self.f_std + self.f_sym

    def to_dict(self) -> dict:
        d = asdict(self)
        d["f_prop"] = self.f_prop
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "FitnessBreakdown":
        d = dict(data)
        d.pop("f_prop", None)
        return cls(**d)


def complete(
    breakdowns: Sequence[FitnessBreakdown],
    envs: Sequence[str],
    beta: float = BETA,
    alpha: float = ALPHA,
) -> list[FitnessBreakdown]:
    """Normalise task scores across ``breakdowns`` and fill in f_task and F."""
    try:
        table = np.array([[b.raw[e] for e in envs] for b in breakdowns], dtype=np.float64)
    except KeyError as exc:
        raise ProtocolError(f"candidate lacks a score for environment {exc.args[0]!r}") from exc
    tasks = f_task(table)
    norm = np.column_stack([minmax_normalize(col) for col in table.T])
    out = []
    for b, t, row in zip(breakdowns, tasks, norm):
        out.append(
            replace(
                b,
                normalized={e: float(v) for e, v in zip(envs, row)},
                f_task=float(t),
                F=float(combine(float(t), b.f_prop, b.f_input, beta, alpha)),
            )
        )
    return out
