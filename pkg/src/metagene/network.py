"""Feed-forward tanh policies and weight diagnostics."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkPhenotype:
    """Dense tanh network; layer k maps ``weights[k] @ x + biases[k]``.

    Weight matrices are (fan_out, fan_in). Arrays may carry leading batch
    dimensions, in which case the object describes a population of networks
    sharing one architecture.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[-2] != b.shape[-1]:
                raise DimensionError(f"layer {k}: weight rows {w.shape[-2]} != bias length {b.shape[-1]}")
            if k and w.shape[-1] != self.weights[k - 1].shape[-2]:
                raise DimensionError(f"layer {k}: fan_in does not chain with previous layer")
            w.flags.writeable = False
            b.flags.writeable = False

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[-1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[-2]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.weights[0].shape[:-2]

    def __getitem__(self, idx) -> "NetworkPhenotype":
        return NetworkPhenotype(
            tuple(np.array(w[idx]) for w in self.weights),
            tuple(np.array(b[idx]) for b in self.biases),
        )


def forward(net: NetworkPhenotype, obs) -> np.ndarray:
    """tanh(W x + b) through every layer, output layer included.

    ``obs`` may be batched; batch dims broadcast against the network's.
    """
    x = np.asarray(obs, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise DimensionError(f"observation has {x.shape[-1]} components, network expects {net.input_dim}")
    for w, b in zip(net.weights, net.biases):
        x = np.tanh(np.einsum("...oi,...i->...o", w, x) + b)
    return x


def all_weights(net: NetworkPhenotype) -> np.ndarray:
    return np.concatenate([w.ravel() for w in net.weights])


@dataclass(frozen=True)
class WeightStats:
    mean: float
    std: float
    zero_fraction: float
    bin_edges: np.ndarray
    counts: np.ndarray

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_left,bin_right,count\n")
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            buf.write(f"{lo!r},{hi!r},{int(c)}\n")
        return buf.getvalue()


def weight_stats(net: NetworkPhenotype, bins: int = 50, value_range=None) -> WeightStats:
    """Population statistics over all weight entries; biases are excluded."""
    w = all_weights(net)
    counts, edges = np.histogram(w, bins=bins, range=value_range)
    return WeightStats(
        mean=float(np.mean(w)),
        std=float(np.std(w)),
        zero_fraction=float(np.mean(w == 0.0)),
        bin_edges=edges,
        counts=counts,
    )
