"""Finite-horizon dynamic-programming oracle for the pendulum.

Backward induction over a periodic (theta, theta_dot) grid with bilinear
interpolation, then a greedy one-step-lookahead rollout on the true
environment. The rollout return is an achievable reward, hence a sound
"best known" reference. Run as a script to regenerate pendulum_reference.json.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

N_TH, N_TD = 201, 161
ACTIONS = np.linspace(-2.0, 2.0, 41)


def _dynamics(th, td, u, g=10.0, m=1.0, l=1.0, max_speed=8.0, dt=0.05, substeps=20):
    cost = (((th + np.pi) % (2 * np.pi)) - np.pi) ** 2 + 0.1 * td**2 + 0.001 * u**2
    h = dt / substeps
    for _ in range(substeps):
        td = np.clip(td + (3 * g / (2 * l) * np.sin(th) + 3.0 / (m * l * l) * u) * h, -max_speed, max_speed)
        th = th + td * h
    return th, td, -cost


class _Grid:
    def __init__(self):
        self.th = np.linspace(-np.pi, np.pi, N_TH, endpoint=False)
        self.td = np.linspace(-8.0, 8.0, N_TD)
        self.dth = 2 * np.pi / N_TH
        self.dtd = 16.0 / (N_TD - 1)

    def interp(self, v, th, td):
        a = ((th + np.pi) % (2 * np.pi)) / self.dth
        i0 = np.floor(a).astype(int) % N_TH
        fa = a - np.floor(a)
        i1 = (i0 + 1) % N_TH
        b = np.clip((td + 8.0) / self.dtd, 0, N_TD - 1 - 1e-9)
        j0 = np.floor(b).astype(int)
        fb = b - j0
        j1 = j0 + 1
        return (
            v[i0, j0] * (1 - fa) * (1 - fb) + v[i1, j0] * fa * (1 - fb)
            + v[i0, j1] * (1 - fa) * fb + v[i1, j1] * fa * fb
        )


def value_tables(horizon: int = 200):
    grid = _Grid()
    TH, TD = np.meshgrid(grid.th, grid.td, indexing="ij")
    nxt = [_dynamics(TH, TD, np.full_like(TH, u)) for u in ACTIONS]
    values = [np.zeros_like(TH)]  # values[k]: optimal return with k steps left
    for _ in range(horizon):
        v = values[-1]
        values.append(np.max([r + grid.interp(v, a, b) for a, b, r in nxt], axis=0))
    return grid, values


def greedy_return(x0, grid, values, horizon: int = 200) -> float:
    th, td = float(x0[0]), float(x0[1])
    total = 0.0
    for t in range(horizon):
        v = values[horizon - t - 1]
        a, b, r = _dynamics(np.full(len(ACTIONS), th), np.full(len(ACTIONS), td), ACTIONS)
        k = int(np.argmax(r + grid.interp(v, a, b)))
        th, td, total = float(a[k]), float(b[k]), total + float(r[k])
    return total


def zero_return(x0, horizon: int = 200) -> float:
    th, td = np.array([x0[0]]), np.array([x0[1]])
    total = 0.0
    for _ in range(horizon):
        th, td, r = _dynamics(th, td, np.zeros(1))
        total += float(r[0])
    return total


def build_reference(starts: dict[str, list[float]]) -> dict:
    grid, values = value_tables()
    return {
        key: {"x0": x0, "zero": zero_return(x0), "optimal": greedy_return(x0, grid, values)}
        for key, x0 in starts.items()
    }


if __name__ == "__main__":
    sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))
    from metagene import envs, meta

    spec = envs.make_env("pendulum")
    starts = {}
    for s in range(5):
        ep = meta.derive_seed(s, 1, 0)
        starts[str(s)] = envs.reset(spec, ep).x[0].tolist()
    ref = build_reference(starts)
    out = Path(__file__).with_name("pendulum_reference.json")
    out.write_text(json.dumps(ref, indent=2, sort_keys=True) + "\n")
    print(json.dumps(ref, indent=2))
