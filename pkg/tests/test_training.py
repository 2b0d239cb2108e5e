from dataclasses import replace

import numpy as np
import pytest

from abps import bandit as B
from abps.bandit import Strategy
from abps.env import EnvSpec, Environment
from abps.learner import Learner
from abps.replay import ReplayBuffer, Transition
from abps.training import (EVAL_STREAM, INIT_EVAL_STREAM, SEED_ACT, SEED_BANDIT, SEED_INIT, SEED_SAMPLE,
                           TRAIN_STREAM, AbpsConfig, AbpsRun, RunAborted, evaluate_greedy, load_checkpoint,
                           online_evaluation, run_abps, stream_rng)

from conftest import CHAIN, GRID, greedy_rollout_return, oracle_learner, small_hyper

# one-step episodes make every period a single transition
ONE_STEP = EnvSpec(kind="chain", length=2, max_episode_steps=1)


def cfg(**kw):
    base = dict(m=1, n_init_eval_episodes=1, eval_episodes=2, eval_period=200, total_env_steps=600,
                strategy=Strategy("ucb"), batch_size=16)
    base.update(kw)
    return AbpsConfig(**base)


def test_initial_evaluation_identical_agents():
    run = AbpsRun(cfg(), [small_hyper()] * 3, GRID, 0)
    snap = run.pool[0].learner.clone_weights()
    for slot in run.pool[1:]:
        slot.learner.load_weights(snap)
    returns = run.initial_evaluation()
    assert returns[0] == returns[1] == returns[2]
    assert run.bandit.means.tolist() == returns


def test_initial_evaluation_episode_count_irrelevant_when_deterministic():
    a = AbpsRun(cfg(n_init_eval_episodes=1), [small_hyper(), small_hyper(hidden_sizes=(4,))], GRID, 3)
    b = AbpsRun(cfg(n_init_eval_episodes=10), [small_hyper(), small_hyper(hidden_sizes=(4,))], GRID, 3)
    assert a.initial_evaluation() == b.initial_evaluation()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_initial_evaluation_replays_greedy_trajectory(seed):
    run = AbpsRun(cfg(), [small_hyper()], CHAIN, seed)
    expected = greedy_rollout_return(run.pool[0].learner, CHAIN)
    assert run.initial_evaluation() == [expected]
    assert run.buffer.insert_count == 0 and run.steps == 0
    assert run.log.eval_env_steps > 0


def _frozen_greedy_run(**kw):
    run = AbpsRun(cfg(learn_start=10**9, **kw), [small_hyper(epsilon_final=0.0), small_hyper()], CHAIN, 5)
    run.initial_evaluation()
    run.pool[0].learner.act_step_count = run.pool[0].hyper.epsilon_decay_steps
    return run


def test_run_period_without_learning_or_exploration():
    run = _frozen_greedy_run()
    expected = greedy_rollout_return(run.pool[0].learner, CHAIN)
    assert run.run_period(0, 1) == expected


def test_run_period_accounting():
    run = AbpsRun(cfg(learn_start=20, total_env_steps=10**6, eval_period=10**6), [small_hyper()] * 3, CHAIN, 1)
    run.initial_evaluation()
    run.run_period(1, 3)
    steps = run.steps
    assert run.buffer.insert_count == steps
    assert [s.learner.train_step_count for s in run.pool] == [steps - 19] * 3
    assert [s.learner.act_step_count for s in run.pool] == [0, steps, 0]
    assert run.episode_counter == 3


def test_online_evaluation_with_oracle_is_optimal():
    spec = EnvSpec(kind="windy-gridworld", width=4, height=4, slip_probability=0.0, max_episode_steps=30)
    learner = oracle_learner(GRID)
    assert online_evaluation(learner, GRID, 5) == 1.0
    assert evaluate_greedy(learner, GRID, 3, (EVAL_STREAM,))[1] == 3 * 6
    assert online_evaluation(oracle_learner(spec), spec, 2) == 1.0


def test_online_evaluation_matches_sequential_rollouts_on_stochastic_env():
    spec = EnvSpec(kind="windy-gridworld", width=5, height=5, slip_probability=0.3, max_episode_steps=20, seed=4)
    learner = oracle_learner(spec)
    totals = []
    for episode in range(7):
        env = Environment(spec)
        obs = env.reset(episode, (9, 1))
        total = 0.0
        while not env.done:
            res = env.step(learner.greedy_action(obs))
            total += res.reward
            obs = res.observation
        totals.append(total)
    assert online_evaluation(learner, spec, 7, (9, 1)) == float(np.mean(totals))


def test_evaluation_is_isolated():
    run = AbpsRun(cfg(), [small_hyper()] * 2, CHAIN, 0)
    run.initial_evaluation()
    run.run_period(0, 2)
    counts = [(s.learner.act_step_count, s.learner.train_step_count) for s in run.pool]
    inserted = run.buffer.insert_count
    run.evaluate_pool()
    assert counts == [(s.learner.act_step_count, s.learner.train_step_count) for s in run.pool]
    assert run.buffer.insert_count == inserted


def test_random_selection_is_uniform():
    log = run_abps(cfg(strategy=Strategy("random"), total_env_steps=4000, eval_period=10**6, learn_start=10**9),
                   [small_hyper()] * 4, ONE_STEP, 0)
    arms = [e.arm for e in log.selection_events]
    assert len(arms) == 4000
    assert np.all(np.abs(np.bincount(arms, minlength=4) / 4000 - 0.25) <= 0.03)


def test_zero_budget_only_initial_evaluation():
    log = run_abps(cfg(total_env_steps=0), [small_hyper()] * 3, CHAIN, 0)
    assert len(log.eval_matrix) == 1 and log.eval_steps == [0]
    assert log.selection_events == [] and log.env_step_counter == 0


def standalone_dqn(config, hyper, spec, seed, agent_id=0):
    """Single-agent DQN written against the primitives, mirroring the seed derivation."""
    learner = Learner.create(hyper, spec.feature_size, spec.action_count, stream_rng(seed, SEED_INIT, agent_id))
    act_rng, sample_rng = stream_rng(seed, SEED_ACT, agent_id), stream_rng(seed, SEED_SAMPLE, agent_id)
    env, buf = Environment(spec), ReplayBuffer(config.buffer_capacity)
    curve = [evaluate_greedy(learner, spec, config.n_init_eval_episodes, (seed, INIT_EVAL_STREAM, agent_id))[0]]
    steps = episode = 0
    while steps < config.total_env_steps:
        obs = env.reset(episode, (seed, TRAIN_STREAM))
        episode += 1
        while True:
            a = learner.act(obs, act_rng)
            res = env.step(a)
            buf.push(Transition(obs.features, a, res.reward, res.observation.features, res.terminal))
            steps += 1
            if len(buf) >= config.effective_learn_start:
                learner.train_step(buf.sample_batch(config.batch_size, sample_rng))
            if steps % config.eval_period == 0:
                curve.append(evaluate_greedy(learner, spec, config.eval_episodes,
                                             (seed, EVAL_STREAM, len(curve), agent_id))[0])
            obs = res.observation
            if res.done or steps >= config.total_env_steps:
                break
    return curve, learner


@pytest.mark.parametrize("strategy", ["ucb", "random", "softmax"])
def test_single_agent_pool_is_plain_dqn(strategy):
    config = cfg(total_env_steps=1500, eval_period=250, strategy=Strategy(strategy))
    hyper = small_hyper()
    run = AbpsRun(config, [hyper], GRID, 7)
    log = run.run()
    curve, learner = standalone_dqn(config, hyper, GRID, 7)
    assert log.agent_curve(0) == curve
    assert all(np.array_equal(a, b) for a, b in zip(run.pool[0].learner.online.params, learner.online.params))


@pytest.mark.parametrize("K", [1, 3, 8])
def test_interaction_budget_independent_of_pool_size(K):
    log = run_abps(cfg(total_env_steps=777, m=2), [small_hyper()] * K, CHAIN, 0)
    assert log.env_step_counter == log.total_interactions == 777
    assert log.selection_events[-1].env_steps == 777


def test_one_behavior_agent_per_period():
    run = AbpsRun(cfg(total_env_steps=900, m=2), [small_hyper()] * 4, CHAIN, 2)
    log = run.run()
    assert sum(s.learner.act_step_count for s in run.pool) == 900
    never = set(range(4)) - {e.arm for e in log.selection_events}
    assert all(run.pool[i].learner.act_step_count == 0 for i in never)
    times = [e.time for e in log.selection_events]
    assert all(a < b for a, b in zip(times, times[1:]))


def test_eval_schedule():
    log = run_abps(cfg(total_env_steps=650, eval_period=200), [small_hyper()] * 2, CHAIN, 0)
    assert log.eval_steps == [0, 200, 400, 600, 650]
    assert all(len(row) == 2 for row in log.eval_matrix)


@pytest.mark.parametrize("strategy", ["ucb", "softmax", "epsilon_greedy", "random"])
@pytest.mark.parametrize("mode", ["cumulative", "sliding"])
def test_selection_audit_replays(strategy, mode):
    config = cfg(strategy=Strategy(strategy), bandit_mode=mode, window_length=3, total_env_steps=500)
    log = run_abps(config, [small_hyper(), small_hyper(learning_rate=1e-2), small_hyper(hidden_sizes=(4,))], CHAIN, 4)
    state = B.init(3, log.eval_matrix[0], mode, 3)
    rng = stream_rng(4, SEED_BANDIT)
    for event in log.selection_events:
        assert B.select(state, config.strategy, rng) == event.arm
        assert state.time == event.time
        B.update(state, event.arm, event.period_reward, state.time)


def test_runs_are_deterministic():
    pool = [small_hyper(), small_hyper(learning_rate=3e-3), small_hyper(hidden_sizes=(8, 8))]
    config = cfg(strategy=Strategy("softmax"), total_env_steps=800)
    assert run_abps(config, pool, GRID, 11) == run_abps(config, pool, GRID, 11)
    assert run_abps(config, pool, GRID, 11) != run_abps(config, pool, GRID, 12)


def test_parallel_learners_match_sequential():
    pool = [small_hyper(), small_hyper(learning_rate=3e-3)]
    config = cfg(total_env_steps=500)
    assert run_abps(replace(config, parallel_learners=True), pool, GRID, 1) == run_abps(config, pool, GRID, 1)


def test_failure_reports_diagnostics():
    run = AbpsRun(cfg(learn_start=16), [small_hyper()], CHAIN, 0)

    def boom(batch):
        raise FloatingPointError("diverged")

    run.pool[0].learner.train_step = boom
    with pytest.raises(RunAborted) as info:
        run.run()
    assert info.value.diagnostics["step"] == 16
    assert info.value.diagnostics["arm"] == 0
    assert "epoch" in info.value.diagnostics


def test_checkpoint_round_trip(tmp_path):
    run = AbpsRun(cfg(total_env_steps=300), [small_hyper(), small_hyper(hidden_sizes=(4, 4))], CHAIN, 0, [10, 20])
    run.run()
    run.save_checkpoint(tmp_path)
    state, weights, bandit = load_checkpoint(tmp_path)
    assert bandit == run.bandit
    assert state["buffer"] == {"capacity": run.buffer.capacity, "insert_count": 300, "len": 300}
    assert state["env_steps"] == 300
    probes = np.eye(5)
    for slot in run.pool:
        fresh = Learner.create(slot.hyper, 5, 2, np.random.default_rng(0))
        fresh.load_weights(weights[slot.agent_id])
        assert np.array_equal(fresh.online.forward(probes), slot.learner.online.forward(probes))
    rng = np.random.default_rng()
    rng.bit_generator.state = state["agents"][0]["act_rng"]
    assert rng.random() == run.pool[0].act_rng.random()


def test_duplicate_agent_ids_rejected():
    with pytest.raises(ValueError):
        AbpsRun(cfg(), [small_hyper()] * 2, CHAIN, 0, [1, 1])
