"""Tests for the two-level learner: aggregation, off-policy correction and round skipping."""

import itertools
import math

import numpy as np
import pytest

from app.ddpg import REWARD_SCALE, DdpgAgent, Transition
from app.environment import MMWAVE, SUB6, EnvAction, LinkEnvironment
from app.hrl import (
    AvailabilityEstimator,
    LowerStep,
    aggregate_upper,
    goal_candidates,
    importance_weight,
    make_agents,
    non_skip_probability,
    relabel_goal,
    round_skip,
    run_hrl_episode,
    train_hrl,
    upper_actor_update,
    upper_critic_update,
    window_size,
)
from app.scenario import load_scenario
from app.schemas import DrlSection
from conftest import TINY

TRAINING = (EnvAction.ANALOG_TRAINING, EnvAction.DIGITAL_TRAINING)


def lower_agent():
    return DdpgAgent(3, 2, DrlSection(hidden=[8]), seed=1, goal_dim=1)


def means(agent, states, goal):
    goals = np.full(len(states), float(goal))
    return agent.actor.forward(agent.policy_input(states, goals))


def transition_from(states, goal, actions, base_means, noise_std):
    steps = [LowerStep(s, goal, a, b, 0.0, s) for s, a, b in zip(states, actions, base_means)]
    return aggregate_upper(steps, len(steps), len(steps), np.zeros(2), np.zeros(2), float(goal), noise_std)


def test_aggregate_upper_truncates_and_scales():
    steps = [LowerStep(np.full(2, i), 1, np.zeros(2), np.zeros(2), float(i + 1), np.full(2, i + 1))
             for i in range(5)]
    t = aggregate_upper(steps, m_upper=5, m_rf=3, upper_state=np.ones(4), next_upper_state=np.zeros(4),
                        goal_action=0.7, noise_std=0.1)
    assert len(t) == 3
    assert np.allclose(t.rewards_env, [3 / 5, 4 / 5, 5 / 5])
    assert t.upper_reward == pytest.approx(3.0)
    assert np.array_equal(t.states[0], np.full(2, 2))
    assert np.array_equal(t.terminal_state, np.full(2, 5))
    assert t.logged_goal == 1
    assert not t.terminal
    with pytest.raises(ValueError):
        aggregate_upper([], 5, 3, np.ones(4), np.zeros(4), 0.7, 0.1)


def test_importance_weight_is_gaussian_ratio():
    agent = lower_agent()
    states = np.random.default_rng(0).uniform(size=(2, 3))
    now = means(agent, states, 0)

    same = transition_from(states, 0, now, now, 0.2)
    assert importance_weight(same, agent) == pytest.approx(1.0)

    # actions at the logging-time mean, current mean 0.1 away on every coordinate
    base = now + 0.1
    shifted = transition_from(states, 0, base, base, 0.2)
    assert importance_weight(shifted, agent) == pytest.approx(math.exp(-0.04 / 0.08))

    far = transition_from(states, 0, now + 5.0, now + 5.0, 0.2)
    assert importance_weight(far, agent, w_clip=(1e-3, 1e3)) == pytest.approx(1e-3)
    near = transition_from(states, 0, now, now + 5.0, 0.2)
    assert importance_weight(near, agent, w_clip=(1e-3, 1e3)) == pytest.approx(1e3)


def test_relabel_picks_goal_explaining_the_actions():
    agent = lower_agent()
    states = np.random.default_rng(1).uniform(size=(3, 3))
    at_one = means(agent, states, 1)

    mislabeled = transition_from(states, 0, at_one, at_one, 0.01)
    weights = goal_candidates(mislabeled, agent)
    assert set(weights) == {0, 1}
    assert weights[1] == pytest.approx(1.0)
    assert weights[0] < 1.0
    assert relabel_goal(mislabeled, agent) == 1

    at_zero = means(agent, states, 0)
    correct = transition_from(states, 0, at_zero, at_zero, 0.01)
    assert relabel_goal(correct, agent) == 0


def test_availability_estimator():
    est = AvailabilityEstimator()
    assert est.q == pytest.approx(0.5)
    est.record(4)
    assert est.q == pytest.approx(2 / 6)
    est.record(0)
    assert est.q == pytest.approx(2 / 6)


def test_round_skip_probability():
    assert non_skip_probability(1.0, 4) == pytest.approx(4 / 7)
    assert non_skip_probability(0.1, 4) == 1.0
    assert non_skip_probability(1.0, 1) == 1.0
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            non_skip_probability(bad, 4)
    rng = np.random.default_rng(2)
    skips = sum(round_skip(1.0, 4, rng) for _ in range(10_000))
    assert abs(skips / 10_000 - 3 / 7) < 0.02
    assert not any(round_skip(1.0, 1, rng) for _ in range(100))


def test_window_and_agent_shapes(tiny_cfg, tiny_env):
    assert window_size(tiny_cfg, tiny_env.m_rf) == 2
    agents = make_agents(tiny_env.feature_size, tiny_env.m_rf, tiny_cfg, seed=0)
    assert agents.upper.state_dim == 2 * tiny_env.feature_size
    assert agents.upper.action_dim == 1
    assert agents.lower.goal_dim == 1 and agents.lower.action_dim == 2


@pytest.mark.parametrize("pinned", [SUB6, MMWAVE])
def test_pinned_goal_keeps_the_band(tiny_traces, pinned):
    cfg = load_scenario(overrides=[TINY, {"hrl": {"pinned_goal": pinned}}])
    env = LinkEnvironment(tiny_traces, cfg)
    agents = make_agents(env.feature_size, env.m_rf, cfg, seed=0)
    log = run_hrl_episode(env, agents, cfg, np.random.default_rng(0), lower_noise=0.1)
    assert all(o.band == pinned for o in log.outcomes)
    switches = [o for o in log.outcomes if o.action is EnvAction.SWITCH_BAND]
    assert len(switches) == (1 if pinned == MMWAVE else 0)


def test_lower_reward_is_zero_on_training_steps(tiny_cfg, tiny_env):
    agents = make_agents(tiny_env.feature_size, tiny_env.m_rf, tiny_cfg, seed=1)
    log = run_hrl_episode(tiny_env, agents, tiny_cfg, np.random.default_rng(1), upper_noise=0.3, lower_noise=0.3)
    lower_outcomes = [o for o in log.outcomes if o.action is not EnvAction.SWITCH_BAND]
    stored = agents.lower_buffer.items
    assert len(stored) == len(lower_outcomes) == len(log.scatter)
    for t, o in zip(stored, lower_outcomes):
        assert t.reward == o.reward * REWARD_SCALE
        if o.action in TRAINING:
            assert t.reward == 0.0
        assert t.goal in (0.0, 1.0)
    assert all(row[1] <= row[2] for row in log.scatter)
    assert len(agents.upper_buffer) >= 1


@pytest.mark.parametrize("correction", ["relabel", "direct_is", "none"])
def test_upper_critic_update_modes(tiny_cfg, tiny_env, correction):
    agents = make_agents(tiny_env.feature_size, tiny_env.m_rf, tiny_cfg, seed=2)
    run_hrl_episode(tiny_env, agents, tiny_cfg, np.random.default_rng(2), lower_noise=0.2, learn=False)
    batch = agents.upper_buffer.sample(1)
    loss = upper_critic_update(batch, agents.upper, agents.lower, 0.9, correction)
    assert loss is not None and np.isfinite(loss)
    assert upper_critic_update(None, agents.upper, agents.lower, 0.9, correction) is None


def test_hrl_training_is_deterministic(tiny_cfg, tiny_traces):
    runs = []
    for _ in range(2):
        logs = train_hrl(LinkEnvironment(tiny_traces, tiny_cfg), tiny_cfg, seed=4, n_episodes=2)
        assert len(logs) == 2
        runs.append(([o.reward for log in logs for o in log.outcomes], [row for log in logs for row in log.scatter]))
    assert runs[0] == runs[1]


def test_hrl_checkpoint_round_trip(tmp_path, tiny_cfg, tiny_env):
    agents = make_agents(tiny_env.feature_size, tiny_env.m_rf, tiny_cfg, seed=5)
    path = tmp_path / "hrl.bbck"
    agents.save(path)
    other = make_agents(tiny_env.feature_size, tiny_env.m_rf, tiny_cfg, seed=6)
    other.load(path)
    x = np.linspace(0, 1, tiny_env.feature_size)
    assert np.array_equal(other.lower.mean_action(x, 1), agents.lower.mean_action(x, 1))
    upper_x = np.linspace(0, 1, agents.upper.state_dim)
    assert np.array_equal(other.upper.mean_action(upper_x), agents.upper.mean_action(upper_x))


def alternating_goals(agent):
    flips = itertools.cycle([1.0, 0.0])
    agent.act = lambda obs, noise_std=0.0, rng=None: np.array([next(flips)])


def test_lower_transitions_carry_the_next_decision_goal(tiny_traces):
    cfg = load_scenario(overrides=[TINY, {"hrl": {"m_upper": 1, "round_skip": "off"}}])
    env = LinkEnvironment(tiny_traces, cfg)
    agents = make_agents(env.feature_size, env.m_rf, cfg, seed=3)
    alternating_goals(agents.upper)
    log = run_hrl_episode(env, agents, cfg, np.random.default_rng(3), lower_noise=0.2, learn=False)

    assert any(o.action is EnvAction.SWITCH_BAND for o in log.outcomes)
    stored = agents.lower_buffer.items
    assert {t.goal for t in stored} == {0.0, 1.0}
    for prev, nxt in zip(stored, stored[1:]):
        assert prev.next_goal == nxt.goal
        # a band switch between the two decisions is part of the lower transition
        assert np.array_equal(prev.next_state, nxt.state)
        assert not prev.terminal
    assert stored[-1].terminal


def test_upper_stream_without_correction_is_flat_ddpg(tiny_traces):
    cfg = load_scenario(overrides=[TINY, {"hrl": {"m_upper": 1, "correction": "none", "round_skip": "off"}}])
    env = LinkEnvironment(tiny_traces, cfg)
    logged = make_agents(env.feature_size, env.m_rf, cfg, seed=3)
    lower_log = run_hrl_episode(env, logged, cfg, np.random.default_rng(3), upper_noise=0.3, lower_noise=0.2,
                                learn=False)
    transitions = logged.upper_buffer.items
    lower_rewards = [o.reward for o in lower_log.outcomes if o.action is not EnvAction.SWITCH_BAND]
    assert [t.upper_reward for t in transitions] == pytest.approx(lower_rewards)

    agents = make_agents(env.feature_size, env.m_rf, cfg, seed=3)
    flat = DdpgAgent(agents.upper.state_dim, 1, cfg.hrl.upper, seed=3 * 2 + 1)
    gamma = cfg.hrl.upper.gamma
    n = cfg.hrl.upper.batch_size
    for i in range(0, len(transitions) - n + 1, n):
        batch = transitions[i:i + n]
        flat_batch = [Transition(t.upper_state, np.array([t.goal_action]), t.upper_reward * REWARD_SCALE,
                                 t.next_upper_state, terminal=t.terminal) for t in batch]
        assert upper_critic_update(batch, agents.upper, agents.lower, gamma, "none") == \
            flat.critic_update(flat_batch, gamma)
        assert upper_actor_update(batch, agents.upper) == flat.actor_update(flat_batch)
        agents.upper.soft_update_targets()
        flat.soft_update_targets()

    ours, theirs = agents.upper.state_arrays(), flat.state_arrays()
    assert ours.keys() == theirs.keys()
    for key in ours:
        assert np.array_equal(ours[key], theirs[key]), key


class QuadraticCritic:
    """Q(s, g) = -(g - 1)^2, exposing only the input gradient."""

    def backward(self, x, upstream):
        dx = np.zeros_like(x)
        dx[:, -1] = -2.0 * (x[:, -1] - 1.0) * upstream[:, 0]
        return [], dx


def test_upper_actor_climbs_the_critic_in_goal():
    upper = DdpgAgent(3, 1, DrlSection(hidden=[], actor_lr=5e-2), seed=0)
    upper.critic = QuadraticCritic()
    rng = np.random.default_rng(4)
    states = rng.uniform(size=(8, 3))
    batch = [aggregate_upper([LowerStep(np.zeros(2), 0, np.zeros(2), np.zeros(2), 0.0, np.zeros(2))],
                             1, 1, s, s, 0.0, 0.1) for s in states]
    for _ in range(1000):
        upper_actor_update(batch, upper)
    goals = upper.actor.forward(states)[:, 0]
    assert np.all(np.abs(goals - 1.0) < 0.05)


def test_round_skip_needs_short_spans():
    # mean span of two slots or more keeps every upper decision
    for m_rf in (4, 128):
        assert non_skip_probability(0.5, m_rf) == 1.0
        assert non_skip_probability(0.9, m_rf) < 1.0


def test_round_skip_fires_on_single_slot_decisions(tiny_traces):
    epochs = {}
    for mode in ("on", "off"):
        cfg = load_scenario(overrides=[TINY, {"env": {"m_dt": 1, "episode_len_decisions": 60},
                                              "hrl": {"m_upper": 1, "pinned_goal": SUB6, "round_skip": mode}}])
        env = LinkEnvironment(tiny_traces, cfg)
        agents = make_agents(env.feature_size, env.m_rf, cfg, seed=0)
        # zero thresholds: every decision is a one-slot data step, so q -> 1
        agents.lower.tau_max = 0.0
        log = run_hrl_episode(env, agents, cfg, np.random.default_rng(5), learn=False)
        assert all(o.action is EnvAction.DATA_TRANSMISSION for o in log.outcomes)
        assert len(log.outcomes) == 60
        epochs[mode] = len(agents.upper_buffer)
    assert epochs["off"] == 60
    assert 0 < epochs["on"] < 50
