import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abps.env import (CHAIN_LEFT, CHAIN_RIGHT, DOWN, RIGHT, EnvError, EnvSpec, Environment, bellman_backup,
                      optimal_q, transitions)


def chain(n=5, **kw):
    return Environment(EnvSpec(kind="chain", length=n, **kw))


def test_chain_reset_starts_at_zero():
    for seed in (0, 3, 99):
        obs = chain().reset(seed)
        assert obs.state_id == 0
        assert obs.features.tolist() == [1, 0, 0, 0, 0]


def test_gridworld_reset_one_hot_start():
    env = Environment(EnvSpec(kind="gridworld", width=4, height=4, seed=7))
    obs = env.reset(0)
    assert obs.state_id == 0
    assert obs.features.shape == (16,)
    assert obs.features[0] == 1 and obs.features.sum() == 1


def test_chain_dynamics():
    env = chain()
    env.reset(0)
    res = env.step(CHAIN_RIGHT)
    assert (res.observation.state_id, res.reward, res.done) == (1, 0.0, False)
    env.step(CHAIN_RIGHT)
    env.step(CHAIN_RIGHT)
    res = env.step(CHAIN_RIGHT)
    assert (res.observation.state_id, res.reward, res.done, res.terminal) == (4, 1.0, True, True)


def test_chain_left_wall():
    env = chain()
    env.reset(0)
    assert env.step(CHAIN_LEFT).observation.state_id == 0


def test_step_after_done_is_rejected():
    env = chain(n=2)
    env.reset(0)
    assert env.step(CHAIN_RIGHT).done
    with pytest.raises(EnvError):
        env.step(CHAIN_RIGHT)


def test_step_before_reset_is_rejected():
    with pytest.raises(EnvError):
        chain().step(0)


def test_illegal_action_rejected():
    env = chain()
    env.reset(0)
    with pytest.raises(EnvError):
        env.step(2)


def test_step_limit_truncates():
    env = chain(max_episode_steps=3)
    env.reset(0)
    results = [env.step(CHAIN_LEFT) for _ in range(3)]
    assert [r.done for r in results] == [False, False, True]
    assert not results[-1].terminal


@pytest.mark.parametrize("kw", [
    dict(kind="pong"),
    dict(kind="chain", max_episode_steps=0),
    dict(kind="gridworld", slip_probability=0.1),
    dict(kind="windy-gridworld", slip_probability=1.5),
])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        EnvSpec(**kw)


def test_windy_slip_frequency():
    # from the start cell, RIGHT lands on cell 1 and a slip (push DOWN) lands on cell width
    spec = EnvSpec(kind="windy-gridworld", width=4, height=4, slip_probability=0.1, seed=11)
    env = Environment(spec)
    slips = 0
    for episode in range(10_000):
        env.reset(episode)
        state = env.step(RIGHT).observation.state_id
        assert state in (1, spec.width)
        slips += state == spec.width
    assert abs(slips / 10_000 - 0.1) <= 0.02


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), episode=st.integers(0, 10_000),
       actions=st.lists(st.integers(0, 3), min_size=1, max_size=60))
def test_windy_replay_is_bit_exact(seed, episode, actions):
    spec = EnvSpec(kind="windy-gridworld", width=5, height=4, slip_probability=0.3, seed=seed,
                   max_episode_steps=40)

    def rollout():
        env = Environment(spec)
        out = [env.reset(episode).features.tobytes()]
        for a in actions:
            if env.done:
                break
            r = env.step(a)
            out.append((r.observation.features.tobytes(), r.reward, r.done))
        return out

    first, second = rollout(), rollout()
    assert first == second
    # episode length never exceeds the step limit
    assert len(first) - 1 <= spec.max_episode_steps


def test_optimal_q_chain_two_states():
    q = optimal_q(EnvSpec(kind="chain", length=2), 0.9)
    # right reaches the goal immediately; left stays put and then goes right
    assert q[0, CHAIN_RIGHT] == pytest.approx(1.0, abs=1e-10)
    assert q[0, CHAIN_LEFT] == pytest.approx(0.9, abs=1e-10)
    assert np.all(q[1] == 0)


def test_optimal_q_chain_closed_form():
    # closed form: from s the goal is (N-1-s) right-steps away
    n, g = 5, 0.9
    q = optimal_q(EnvSpec(kind="chain", length=n), g)
    for s in range(n - 1):
        v = lambda x: g ** (n - 2 - x)
        assert q[s, CHAIN_RIGHT] == pytest.approx(v(s), abs=1e-10)
        assert q[s, CHAIN_LEFT] == pytest.approx(g * v(max(s - 1, 0)), abs=1e-10)


@pytest.mark.parametrize("spec", [
    EnvSpec(kind="chain", length=7),
    EnvSpec(kind="gridworld", width=4, height=3),
    EnvSpec(kind="windy-gridworld", width=5, height=5, slip_probability=0.25),
])
@pytest.mark.parametrize("discount", [0.0, 0.5, 0.99])
def test_optimal_q_is_bellman_fixed_point(spec, discount):
    q = optimal_q(spec, discount)
    assert np.max(np.abs(q - bellman_backup(spec, q, discount))) <= 1e-10


@pytest.mark.parametrize("spec", [
    EnvSpec(kind="chain", length=4),
    EnvSpec(kind="windy-gridworld", width=3, height=3, slip_probability=0.4),
])
def test_zero_discount_gives_expected_immediate_reward(spec):
    q = optimal_q(spec, 0.0)
    for s in range(spec.state_count - 1):
        for a in range(spec.action_count):
            expected = sum(p * r for p, _, r, _ in transitions(spec, s, a))
            assert q[s, a] == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("w,h", [(4, 4), (6, 6), (5, 3)])
def test_gridworld_greedy_q_star_takes_manhattan_path(w, h):
    spec = EnvSpec(kind="gridworld", width=w, height=h, max_episode_steps=1000)
    q = optimal_q(spec, 0.99)
    env = Environment(spec)
    obs = env.reset(0)
    steps = 0
    while True:
        res = env.step(int(np.argmax(q[obs.state_id])))
        steps += 1
        obs = res.observation
        if res.done:
            break
    assert res.terminal
    assert steps == (w - 1) + (h - 1)


def test_windy_q_star_matches_monte_carlo_value():
    # independent check: simulate the greedy Q* policy and compare discounted returns to V*(start)
    spec = EnvSpec(kind="windy-gridworld", width=4, height=4, slip_probability=0.2, seed=5,
                   max_episode_steps=500)
    g = 0.9
    q = optimal_q(spec, g)
    env = Environment(spec)
    returns = []
    for episode in range(4000):
        obs = env.reset(episode)
        total, disc = 0.0, 1.0
        while not env.done:
            res = env.step(int(np.argmax(q[obs.state_id])))
            total += disc * res.reward
            disc *= g
            obs = res.observation
        returns.append(total)
    se = np.std(returns) / np.sqrt(len(returns))
    assert abs(np.mean(returns) - q[0].max()) < 4 * se + 1e-9
