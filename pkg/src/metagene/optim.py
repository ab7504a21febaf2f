"""Separable CMA-ES with an ask/tell interface.

Maximisation convention: larger fitness is better. Internally candidates are
ranked by descending fitness with a stable sort, so ties keep submission order.

Strategy parameters are the usual CMA-ES defaults. For the separable variant
both covariance learning rates are multiplied by (n + 2) / 3, with c_mu capped
at 1 - c_1. Only diagonal quantities are stored, so memory and update cost are
linear in the dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

CHECKPOINT_FORMAT = "sepcma-v1"


class ConfigurationError(ValueError):
    pass


class ProtocolError(ValueError):
    pass


class Candidate(NamedTuple):
    genome: np.ndarray
    fitness: float


@dataclass(frozen=True)
class SepCmaParams:
    dim: int
    popsize: int
    mu: int
    weights: np.ndarray
    mueff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float

    @classmethod
    def default(cls, dim: int, popsize: int) -> "SepCmaParams":
        n = dim
        mu = popsize // 2
        raw = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        weights = raw / raw.sum()
        mueff = 1.0 / float(np.sum(weights**2))
        c_sigma = (mueff + 2) / (n + mueff + 5)
        d_sigma = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + c_sigma
        c_c = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        c_1 = 2 / ((n + 1.3) ** 2 + mueff)
        c_mu = min(1 - c_1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        sep = (n + 2) / 3
        c_1 = min(1.0, c_1 * sep)
        c_mu = min(1 - c_1, c_mu * sep)
        chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        return cls(n, popsize, mu, weights, mueff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n)


@dataclass(frozen=True)
class SepCmaState:
    params: SepCmaParams
    mean: np.ndarray
    sigma: float
    diag_cov: np.ndarray
    path_sigma: np.ndarray
    path_c: np.ndarray
    generation: int = 0

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def popsize(self) -> int:
        return self.params.popsize


def init(dim: int, mean0=0.0, sigma0: float = 0.5, popsize: int = 32) -> SepCmaState:
    if dim < 1:
        raise ConfigurationError("dimension must be >= 1")
    if not sigma0 > 0:
        raise ConfigurationError("sigma0 must be positive")
    if popsize < 2:
        raise ConfigurationError("population size must be >= 2")
    mean = np.broadcast_to(np.asarray(mean0, dtype=np.float64), (dim,)).copy()
    return SepCmaState(
        params=SepCmaParams.default(dim, popsize),
        mean=mean,
        sigma=float(sigma0),
        diag_cov=np.ones(dim),
        path_sigma=np.zeros(dim),
        path_c=np.zeros(dim),
    )


def ask(state: SepCmaState, rng: np.random.Generator) -> np.ndarray:
    """Sample ``popsize`` genomes as rows of a (popsize, dim) array."""
    z = rng.standard_normal((state.popsize, state.dim))
    return state.mean + state.sigma * (np.sqrt(state.diag_cov) * z)


def tell(state: SepCmaState, candidates: Sequence[Candidate] | Sequence[tuple]) -> SepCmaState:
    p = state.params
    if len(candidates) != p.popsize:
        raise ProtocolError(f"expected {p.popsize} candidates, got {len(candidates)}")
    x = np.array([np.asarray(c[0], dtype=np.float64) for c in candidates])
    fitness = np.array([float(c[1]) for c in candidates])
    if x.shape != (p.popsize, p.dim):
        raise ProtocolError(f"candidate genomes must have shape ({p.popsize}, {p.dim})")

    order = np.argsort(-fitness, kind="stable")
    y = (x - state.mean) / state.sigma
    y_sel = y[order[: p.mu]]
    y_w = p.weights @ y_sel

    mean = state.mean + state.sigma * y_w
    inv_sqrt_c = 1.0 / np.sqrt(state.diag_cov)
    path_sigma = (1 - p.c_sigma) * state.path_sigma + math.sqrt(
        p.c_sigma * (2 - p.c_sigma) * p.mueff
    ) * (y_w * inv_sqrt_c)
    norm_ps = float(np.linalg.norm(path_sigma))
    sigma = state.sigma * math.exp((p.c_sigma / p.d_sigma) * (norm_ps / p.chi_n - 1))

    g = state.generation + 1
    h_sigma = (
        norm_ps / math.sqrt(1 - (1 - p.c_sigma) ** (2 * g)) < (1.4 + 2 / (p.dim + 1)) * p.chi_n
    )
    h = 1.0 if h_sigma else 0.0
    path_c = (1 - p.c_c) * state.path_c + h * math.sqrt(p.c_c * (2 - p.c_c) * p.mueff) * y_w
    delta_h = (1 - h) * p.c_c * (2 - p.c_c)

    rank_mu = p.weights @ (y_sel * y_sel)
    diag_cov = (
        (1 - p.c_1 - p.c_mu + p.c_1 * delta_h) * state.diag_cov
        + p.c_1 * path_c * path_c
        + p.c_mu * rank_mu
    )
    diag_cov = np.maximum(diag_cov, np.finfo(np.float64).tiny)
    return replace(
        state,
        mean=mean,
        sigma=sigma,
        diag_cov=diag_cov,
        path_sigma=path_sigma,
        path_c=path_c,
        generation=g,
    )


# --- checkpointing -----------------------------------------------------------------

def state_to_dict(state: SepCmaState) -> dict:
    """JSON-safe dump; floats survive a json round trip exactly."""
    return {
        "format": CHECKPOINT_FORMAT,
        "dim": state.dim,
        "popsize": state.popsize,
        "mean": state.mean.tolist(),
        "sigma": state.sigma,
        "diag_cov": state.diag_cov.tolist(),
        "path_sigma": state.path_sigma.tolist(),
        "path_c": state.path_c.tolist(),
        "generation": state.generation,
    }


def state_from_dict(data: dict) -> SepCmaState:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"unsupported optimiser checkpoint format {data.get('format')!r}")
    dim, popsize = int(data["dim"]), int(data["popsize"])
    arrays = {k: np.asarray(data[k], dtype=np.float64) for k in ("mean", "diag_cov", "path_sigma", "path_c")}
    if any(a.shape != (dim,) for a in arrays.values()):
        raise ConfigurationError("optimiser checkpoint arrays do not match its dimension")
    return SepCmaState(
        params=SepCmaParams.default(dim, popsize),
        sigma=float(data["sigma"]),
        generation=int(data["generation"]),
        **arrays,
    )
