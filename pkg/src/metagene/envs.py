"""Small deterministic continuous-control tasks and the rollout harness.

All environments are vectorised over a leading batch axis and integrate with
fixed-step semi-implicit Euler (velocities first, then positions), optionally
split into ``substeps`` per control step.

pendulum
    state (theta, theta_dot), theta = 0 upright. obs [cos, sin, theta_dot].
    theta_dd = 3 g / (2 l) sin(theta) + 3 / (m l^2) u, u in [-2, 2],
    theta_dot clipped to +-8. reward -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2).
    reset: theta ~ U[-pi, pi], theta_dot ~ U[-1, 1]. 200 steps, dt 0.05.
cartpole_swingup
    state (x, x_dot, theta, theta_dot), theta = 0 upright, pi hanging.
    obs [x, x_dot, cos, sin, theta_dot]. Classic cart-pole equations with force
    10 * u, u in [-1, 1]. reward (1 + cos theta) / 2. Terminates when
    |x| > 2.4. Velocities clipped to +-10 and +-20. reset: hanging down with
    U[-0.05, 0.05] noise on every component. 200 steps, dt 0.05.
acrobot
    state (theta1, theta2, dtheta1, dtheta2), theta1 = 0 hanging down.
    obs [cos1, sin1, cos2, sin2, dtheta1, dtheta2]. Standard two-link
    dynamics, torque u in [-1, 1] on the second joint, velocities clipped to
    4 pi and 9 pi. reward is the tip height -cos(t1) - cos(t1 + t2).
    reset: every component ~ U[-0.1, 0.1]. 200 steps, dt 0.2.
mountain_car
    state (position, velocity). obs = state. v += 0.0015 u - 0.0025 cos(3 p),
    v in [-0.07, 0.07], p in [-1.2, 0.6] (velocity zeroed at the left wall).
    reward -0.1 u^2 per step, +100 and termination when p >= 0.45.
    reset: p ~ U[-0.6, -0.4], v = 0. 300 steps.

Policies emit tanh outputs in (-1, 1); the harness multiplies them by
``action_scale`` and clips to ``[-action_bound, action_bound]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from metagene.network import DimensionError, NetworkPhenotype, forward


class UnknownEnvironmentError(KeyError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    id: str
    obs_dim: int
    act_dim: int
    max_steps: int
    dt: float
    action_bound: float
    action_scale: float
    reward_bound: float  # bound on |reward| of any single step
    substeps: int = 1
    constants: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class EnvState:
    x: np.ndarray  # (batch, state_dim)
    t: int = 0
    done: np.ndarray | None = None  # (batch,) termination flags


def _wrap(theta):
    return ((theta + np.pi) % (2 * np.pi)) - np.pi


# --- pendulum ------------------------------------------------------------------

def _pendulum_reset(spec, rng):
    return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])


def _pendulum_step(spec, x, u):
    c = spec.constants
    u = u[:, 0]
    th, thdot = x[:, 0], x[:, 1]
    cost = _wrap(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
    h = spec.dt / spec.substeps
    for _ in range(spec.substeps):
        acc = 3 * c["g"] / (2 * c["l"]) * np.sin(th) + 3.0 / (c["m"] * c["l"] ** 2) * u
        thdot = np.clip(thdot + acc * h, -c["max_speed"], c["max_speed"])
        th = th + thdot * h
    return np.stack([th, thdot], axis=1), -cost, np.zeros(len(x), dtype=bool)


def _pendulum_obs(spec, x):
    return np.stack([np.cos(x[:, 0]), np.sin(x[:, 0]), x[:, 1]], axis=1)


def pendulum_energy(spec: EnvSpec, x) -> np.ndarray:
    """Energy per unit inertia, zero when hanging at rest."""
    c = spec.constants
    x = np.atleast_2d(x)
    return 0.5 * x[:, 1] ** 2 + 3 * c["g"] / (2 * c["l"]) * (1 + np.cos(x[:, 0]))


# --- cart-pole swing-up --------------------------------------------------------

def _cartpole_reset(spec, rng):
    noise = rng.uniform(-0.05, 0.05, size=4)
    return np.array([0.0, 0.0, np.pi, 0.0]) + noise


def _cartpole_step(spec, x, u):
    c = spec.constants
    force = c["force_mag"] * u[:, 0]
    pos, vel, th, thdot = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    total = c["m_cart"] + c["m_pole"]
    pml = c["m_pole"] * c["l"]
    h = spec.dt / spec.substeps
    for _ in range(spec.substeps):
        sin, cos = np.sin(th), np.cos(th)
        temp = (force + pml * thdot**2 * sin) / total
        th_acc = (c["g"] * sin - cos * temp) / (c["l"] * (4.0 / 3.0 - c["m_pole"] * cos**2 / total))
        x_acc = temp - pml * th_acc * cos / total
        vel = np.clip(vel + x_acc * h, -c["max_vel"], c["max_vel"])
        thdot = np.clip(thdot + th_acc * h, -c["max_ang_vel"], c["max_ang_vel"])
        pos = pos + vel * h
        th = th + thdot * h
    reward = 0.5 * (1.0 + np.cos(th))
    terminated = np.abs(pos) > c["x_limit"]
    return np.stack([pos, vel, th, thdot], axis=1), reward, terminated


def _cartpole_obs(spec, x):
    return np.stack([x[:, 0], x[:, 1], np.cos(x[:, 2]), np.sin(x[:, 2]), x[:, 3]], axis=1)


# --- acrobot -----------------------------------------------------------------------

def _acrobot_reset(spec, rng):
    return rng.uniform(-0.1, 0.1, size=4)


def _acrobot_step(spec, x, u):
    c = spec.constants
    a = u[:, 0]
    m1, m2, l1, lc1, lc2, i1, i2, g = (c[k] for k in ("m1", "m2", "l1", "lc1", "lc2", "i1", "i2", "g"))
    t1, t2, dt1, dt2 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    h = spec.dt / spec.substeps
    for _ in range(spec.substeps):
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * np.cos(t2)) + i1 + i2
        d2 = m2 * (lc2**2 + l1 * lc2 * np.cos(t2)) + i2
        phi2 = m2 * lc2 * g * np.cos(t1 + t2 - np.pi / 2)
        phi1 = (
            -m2 * l1 * lc2 * dt2**2 * np.sin(t2)
            - 2 * m2 * l1 * lc2 * dt2 * dt1 * np.sin(t2)
            + (m1 * lc1 + m2 * l1) * g * np.cos(t1 - np.pi / 2)
            + phi2
        )
        ddt2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * dt1**2 * np.sin(t2) - phi2) / (
            m2 * lc2**2 + i2 - d2**2 / d1
        )
        ddt1 = -(d2 * ddt2 + phi1) / d1
        dt1 = np.clip(dt1 + ddt1 * h, -c["max_vel1"], c["max_vel1"])
        dt2 = np.clip(dt2 + ddt2 * h, -c["max_vel2"], c["max_vel2"])
        t1 = t1 + dt1 * h
        t2 = t2 + dt2 * h
    reward = -np.cos(t1) - np.cos(t1 + t2)
    return np.stack([t1, t2, dt1, dt2], axis=1), reward, np.zeros(len(x), dtype=bool)


def _acrobot_obs(spec, x):
    t1, t2 = x[:, 0], x[:, 1]
    return np.stack([np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2), x[:, 2], x[:, 3]], axis=1)


# --- mountain car -----------------------------------------------------------------

def _mountain_reset(spec, rng):
    return np.array([rng.uniform(-0.6, -0.4), 0.0])


def _mountain_step(spec, x, u):
    c = spec.constants
    force = u[:, 0]
    pos, vel = x[:, 0], x[:, 1]
    vel = np.clip(vel + force * c["power"] - 0.0025 * np.cos(3 * pos), -c["max_speed"], c["max_speed"])
    pos = np.clip(pos + vel, c["min_position"], c["max_position"])
    vel = np.where((pos == c["min_position"]) & (vel < 0), 0.0, vel)
    reached = pos >= c["goal_position"]
    reward = np.where(reached, 100.0, 0.0) - 0.1 * force**2
    return np.stack([pos, vel], axis=1), reward, reached


def _mountain_obs(spec, x):
    return x.copy()


@dataclass(frozen=True)
class _Dynamics:
    reset: Callable
    step: Callable
    observe: Callable


_DYNAMICS = {
    "pendulum": _Dynamics(_pendulum_reset, _pendulum_step, _pendulum_obs),
    "cartpole_swingup": _Dynamics(_cartpole_reset, _cartpole_step, _cartpole_obs),
    "acrobot": _Dynamics(_acrobot_reset, _acrobot_step, _acrobot_obs),
    "mountain_car": _Dynamics(_mountain_reset, _mountain_step, _mountain_obs),
}

_DEFAULTS = {
    "pendulum": dict(
        obs_dim=3, act_dim=1, max_steps=200, dt=0.05, substeps=20, action_bound=2.0, action_scale=2.0,
        constants=dict(g=10.0, m=1.0, l=1.0, max_speed=8.0),
    ),
    "cartpole_swingup": dict(
        obs_dim=5, act_dim=1, max_steps=200, dt=0.05, substeps=5, action_bound=1.0, action_scale=1.0,
        constants=dict(
            g=9.8, m_cart=1.0, m_pole=0.1, l=0.5, force_mag=10.0, x_limit=2.4, max_vel=10.0, max_ang_vel=20.0
        ),
    ),
    "acrobot": dict(
        obs_dim=6, act_dim=1, max_steps=200, dt=0.2, substeps=4, action_bound=1.0, action_scale=1.0,
        constants=dict(
            m1=1.0, m2=1.0, l1=1.0, lc1=0.5, lc2=0.5, i1=1.0, i2=1.0, g=9.8,
            max_vel1=4 * math.pi, max_vel2=9 * math.pi,
        ),
    ),
    "mountain_car": dict(
        obs_dim=2, act_dim=1, max_steps=300, dt=1.0, substeps=1, action_bound=1.0, action_scale=1.0,
        constants=dict(
            power=0.0015, max_speed=0.07, min_position=-1.2, max_position=0.6, goal_position=0.45
        ),
    ),
}

ENV_IDS = tuple(_DYNAMICS)


def _reward_bound(env_id: str, constants: dict, action_bound: float) -> float:
    if env_id == "pendulum":
        return math.pi**2 + 0.1 * constants["max_speed"] ** 2 + 0.001 * action_bound**2
    if env_id == "cartpole_swingup":
        return 1.0
    if env_id == "acrobot":
        return 2.0
    return 100.0 + 0.1 * action_bound**2


def make_env(env_id: str, max_steps: int | None = None, **constants) -> EnvSpec:
    """Build an environment spec; keyword arguments override physical constants."""
    if env_id not in _DEFAULTS:
        raise UnknownEnvironmentError(f"unknown environment {env_id!r}; known: {', '.join(ENV_IDS)}")
    cfg = dict(_DEFAULTS[env_id])
    consts = dict(cfg.pop("constants"))
    unknown = set(constants) - set(consts)
    if unknown:
        raise ValueError(f"unknown constants for {env_id}: {sorted(unknown)}")
    consts.update({k: float(v) for k, v in constants.items()})
    if max_steps is not None:
        cfg["max_steps"] = int(max_steps)
    return EnvSpec(
        id=env_id,
        reward_bound=_reward_bound(env_id, consts, cfg["action_bound"]),
        constants=consts,
        **cfg,
    )


def reset(spec: EnvSpec, seed: int, batch: int = 1) -> EnvState:
    """Seeded initial state, replicated ``batch`` times."""
    rng = np.random.default_rng(seed)
    x0 = _DYNAMICS[spec.id].reset(spec, rng)
    return EnvState(np.tile(x0, (batch, 1)), 0, np.zeros(batch, dtype=bool))


def observe(spec: EnvSpec, state: EnvState) -> np.ndarray:
    return _DYNAMICS[spec.id].observe(spec, state.x)


def step(spec: EnvSpec, state: EnvState, action) -> tuple[EnvState, np.ndarray, np.ndarray]:
    """Advance one control step. Returns (state, reward, done) with batch-shaped arrays.

    Already-finished batch members are frozen and receive zero reward.
    """
    a = np.asarray(action, dtype=np.float64).reshape(len(state.x), spec.act_dim)
    a = np.clip(a, -spec.action_bound, spec.action_bound)
    x, reward, terminated = _DYNAMICS[spec.id].step(spec, state.x, a)
    prev_done = state.done if state.done is not None else np.zeros(len(x), dtype=bool)
    x = np.where(prev_done[:, None], state.x, x)
    reward = np.where(prev_done, 0.0, reward)
    t = state.t + 1
    done = prev_done | terminated | (t >= spec.max_steps)
    return replace(state, x=x, t=t, done=done), reward, done


def rollout_batch(net: NetworkPhenotype, spec: EnvSpec, seed: int, trace: list | None = None) -> np.ndarray:
    """Total episode reward for every network of a (possibly batched) phenotype.

    All members start from the same seeded initial state. When ``trace`` is a
    list, rows ``(step, *state, *action, reward)`` of member 0 are appended.
    """
    if net.input_dim != spec.obs_dim or net.output_dim != spec.act_dim:
        raise DimensionError(
            f"network {net.input_dim}->{net.output_dim} does not fit {spec.id} "
            f"({spec.obs_dim}->{spec.act_dim})"
        )
    batch = int(np.prod(net.batch_shape)) if net.batch_shape else 1
    state = reset(spec, seed, batch)
    total = np.zeros(batch)
    while True:
        obs = observe(spec, state).reshape(net.batch_shape + (spec.obs_dim,))
        out = forward(net, obs).reshape(batch, spec.act_dim)
        action = np.clip(out * spec.action_scale, -spec.action_bound, spec.action_bound)
        prev_x = state.x
        state, reward, done = step(spec, state, action)
        total += reward
        if trace is not None:
            trace.append((state.t - 1, *prev_x[0].tolist(), *action[0].tolist(), float(reward[0])))
        if done.all():
            return total.reshape(net.batch_shape) if net.batch_shape else total


def rollout(net: NetworkPhenotype, spec: EnvSpec, seed: int, trace: list | None = None) -> float:
    """Total reward of a single network."""
    if net.batch_shape:
        raise DimensionError("rollout expects a single network; use rollout_batch for populations")
    return float(rollout_batch(net, spec, seed, trace)[0])
