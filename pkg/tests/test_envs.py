import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metagene import envs
from metagene.network import DimensionError, NetworkPhenotype

OBS_BOUNDS = {
    "pendulum": [1, 1, 8],
    "cartpole_swingup": [2.4 + 0.05 * 10 * 1.01, 10, 1, 1, 20],
    "acrobot": [1, 1, 1, 1, 4 * math.pi, 9 * math.pi],
    "mountain_car": [1.2, 0.07],
}


def constant_net(obs_dim, act_dim, value=0.0, batch=()):
    bias = np.full(batch + (act_dim,), np.arctanh(value))
    return NetworkPhenotype((np.zeros(batch + (act_dim, obs_dim)),), (bias,))


@pytest.mark.parametrize("env_id", envs.ENV_IDS)
def test_reset_is_seeded(env_id):
    spec = envs.make_env(env_id)
    a, b, c = envs.reset(spec, 3), envs.reset(spec, 3), envs.reset(spec, 4)
    assert np.array_equal(a.x, b.x)
    assert not np.array_equal(a.x, c.x)
    assert envs.reset(spec, 3, batch=4).x.shape[0] == 4


@pytest.mark.parametrize("env_id", envs.ENV_IDS)
def test_rollout_deterministic(env_id, rng):
    spec = envs.make_env(env_id)
    net = NetworkPhenotype(
        (rng.normal(size=(8, spec.obs_dim)), rng.normal(size=(spec.act_dim, 8))),
        (rng.normal(size=8), rng.normal(size=spec.act_dim)),
    )
    assert envs.rollout(net, spec, 11) == envs.rollout(net, spec, 11)


@pytest.mark.parametrize("env_id", envs.ENV_IDS)
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000), actions=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_observations_stay_bounded(env_id, seed, actions):
    spec = envs.make_env(env_id)
    state = envs.reset(spec, seed)
    bound = np.array(OBS_BOUNDS[env_id]) + 1e-9
    for a in actions:
        state, reward, done = envs.step(spec, state, [[a]])
        obs = envs.observe(spec, state)[0]
        assert np.all(np.abs(obs) <= bound)
        assert abs(reward[0]) <= spec.reward_bound + 1e-9
        if done[0]:
            break


def test_pendulum_energy_conserved_without_torque():
    spec = envs.make_env("pendulum")
    state = envs.EnvState(np.array([[3.0, 0.0]]), 0, np.zeros(1, dtype=bool))
    e0 = envs.pendulum_energy(spec, state.x)[0]
    energies = []
    for _ in range(200):
        state, _, _ = envs.step(spec, state, [[0.0]])
        energies.append(envs.pendulum_energy(spec, state.x)[0])
    assert np.max(np.abs(np.array(energies) - e0)) / e0 < 0.01


def test_pendulum_hanging_at_rest_stays():
    spec = envs.make_env("pendulum")
    state = envs.EnvState(np.array([[math.pi, 0.0]]), 0, np.zeros(1, dtype=bool))
    for _ in range(50):
        state, r, _ = envs.step(spec, state, [[0.0]])
    assert abs(state.x[0, 0] - math.pi) < 1e-9
    assert abs(r[0] + math.pi**2) < 1e-6


def test_episode_length_and_override():
    for env_id in envs.ENV_IDS:
        spec = envs.make_env(env_id, max_steps=7)
        trace = []
        envs.rollout(constant_net(spec.obs_dim, spec.act_dim), spec, 0, trace)
        assert len(trace) <= 7
    spec = envs.make_env("pendulum", max_steps=7)
    trace = []
    envs.rollout(constant_net(3, 1), spec, 0, trace)
    assert [row[0] for row in trace] == list(range(7))


def test_actions_are_scaled_then_clipped():
    spec = envs.make_env("pendulum", max_steps=1)
    trace = []
    envs.rollout(constant_net(3, 1, 0.75), spec, 0, trace)
    assert trace[0][3] == pytest.approx(1.5)
    s2 = envs.make_env("mountain_car", max_steps=1)
    trace = []
    envs.rollout(constant_net(2, 1, 0.999999), s2, 0, trace)
    assert trace[0][3] <= 1.0


def test_cartpole_terminates_off_track():
    spec = envs.make_env("cartpole_swingup")
    trace = []
    envs.rollout(constant_net(5, 1, 0.999), spec, 0, trace)
    assert len(trace) < spec.max_steps
    assert abs(trace[-1][1]) <= 2.4


def test_mountain_car_goal_bonus():
    spec = envs.make_env("mountain_car")
    state = envs.EnvState(np.array([[0.449, 0.07]]), 0, np.zeros(1, dtype=bool))
    state, r, done = envs.step(spec, state, [[0.0]])
    assert done[0] and r[0] == 100.0


def test_finished_members_are_frozen():
    spec = envs.make_env("mountain_car")
    x = np.array([[0.449, 0.07], [-0.5, 0.0]])
    state = envs.EnvState(x, 0, np.zeros(2, dtype=bool))
    state, r, done = envs.step(spec, state, [[0.0], [0.0]])
    frozen = state.x[0].copy()
    state, r, done = envs.step(spec, state, [[1.0], [1.0]])
    assert np.array_equal(state.x[0], frozen) and r[0] == 0.0


def test_batched_rollout_matches_single(rng):
    spec = envs.make_env("cartpole_swingup", max_steps=50)
    W1, W2 = rng.normal(size=(6, 8, 5)), rng.normal(size=(6, 1, 8))
    b1, b2 = rng.normal(size=(6, 8)), rng.normal(size=(6, 1))
    batch = NetworkPhenotype((W1, W2), (b1, b2))
    total = envs.rollout_batch(batch, spec, 2)
    for k in range(6):
        assert total[k] == envs.rollout(batch[k], spec, 2)


def test_errors():
    with pytest.raises(envs.UnknownEnvironmentError, match="walker"):
        envs.make_env("walker")
    with pytest.raises(ValueError):
        envs.make_env("pendulum", gravity=3)
    with pytest.raises(DimensionError):
        envs.rollout(constant_net(4, 1), envs.make_env("pendulum"), 0)
    with pytest.raises(DimensionError):
        envs.rollout(constant_net(3, 1, batch=(2,)), envs.make_env("pendulum"), 0)


def test_constants_override():
    spec = envs.make_env("pendulum", g=0.0)
    state = envs.EnvState(np.array([[1.0, 0.0]]), 0, np.zeros(1, dtype=bool))
    state, _, _ = envs.step(spec, state, [[0.0]])
    assert state.x[0, 0] == 1.0
