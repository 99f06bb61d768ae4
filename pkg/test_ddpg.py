"""Tests for the actor-critic learner, replay buffer and the flat three-threshold policy."""

import numpy as np
import pytest
from scipy.stats import chisquare

from app.ddpg import (
    TAU_MAX_MARGIN,
    DdpgAgent,
    ReplayBuffer,
    Transition,
    noise_schedule,
    train_three_threshold,
)
from app.environment import MMWAVE, BeamState, EnvAction, LinkEnvironment, StepOutcome
from app.errors import ShapeError
from app.scenario import load_scenario
from app.schemas import DrlSection


def random_batch(rng, n, state_dim=3, action_dim=2, terminal=False):
    return [Transition(rng.uniform(size=state_dim), rng.uniform(size=action_dim), float(rng.standard_normal()),
                       rng.uniform(size=state_dim), terminal=terminal) for _ in range(n)]


def test_act_clips_and_is_deterministic_without_noise():
    agent = DdpgAgent(3, 2, DrlSection(hidden=[8]), seed=1)
    s = np.array([0.1, 0.5, 0.9])
    mu = agent.mean_action(s)
    assert mu.shape == (2,)
    assert np.all((mu > 0) & (mu < 1))
    assert np.array_equal(agent.act(s), mu)
    rng = np.random.default_rng(0)
    noisy = np.array([agent.act(s, noise_std=10.0, rng=rng) for _ in range(200)])
    assert np.all((noisy >= 0) & (noisy <= 1))
    assert np.any(noisy == 0.0) and np.any(noisy == 1.0)


def test_thresholds_scale_with_tau_max():
    agent = DdpgAgent(3, 3, DrlSection(hidden=[4], tau_max_init=8.0))
    assert np.allclose(agent.thresholds(np.array([0.0, 0.5, 1.0])), [0.0, 4.0, 8.0])
    agent.refresh_tau_max(5.0)
    assert agent.tau_max == pytest.approx(TAU_MAX_MARGIN * 5.0)
    agent.refresh_tau_max(0.0)
    assert agent.tau_max == pytest.approx(TAU_MAX_MARGIN * 5.0)


def test_replay_buffer_ring_and_sampling():
    buf = ReplayBuffer(3, np.random.default_rng(0))
    assert buf.sample(1) is None
    for i in range(5):
        buf.push(i)
    assert len(buf) == 3
    assert sorted(buf.items) == [2, 3, 4]
    assert buf.sample(4) is None
    batch = buf.sample(3)
    assert sorted(batch) == [2, 3, 4]
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_replay_sampling_is_uniform():
    buf = ReplayBuffer(10, np.random.default_rng(1))
    for i in range(10):
        buf.push(i)
    counts = np.zeros(10)
    for _ in range(5000):
        idx = buf.sample_indices(3)
        assert len(set(idx)) == 3
        counts[idx] += 1
    assert chisquare(counts).pvalue > 1e-3


def test_noise_schedule():
    cfg = DrlSection(noise_start=0.2, noise_end=0.02)
    assert noise_schedule(cfg, 0, 10) == pytest.approx(0.2)
    assert noise_schedule(cfg, 9, 10) == pytest.approx(0.02)
    assert noise_schedule(cfg, 0, 1) == pytest.approx(0.2)


def test_bellman_targets_use_target_networks():
    rng = np.random.default_rng(2)
    agent = DdpgAgent(3, 2, DrlSection(hidden=[8]), seed=3)
    batch = random_batch(rng, 6)
    before = agent.bellman_targets(batch, 0.9)

    s2 = np.stack([t.next_state for t in batch])
    a2 = agent.actor_target.forward(s2)
    q2 = agent.critic_target.forward(np.concatenate([s2, a2], axis=1))[:, 0]
    r = np.array([t.reward for t in batch])
    assert np.allclose(before, r + 0.9 * q2)

    for net in (agent.actor, agent.critic):
        for p in net.params():
            p += 1.0
    assert np.allclose(agent.bellman_targets(batch, 0.9), before)
    assert np.allclose(agent.bellman_targets(batch, 0.9, weights=np.zeros(6)), r)
    terminal = random_batch(rng, 4, terminal=True)
    assert np.allclose(agent.bellman_targets(terminal, 0.9), [t.reward for t in terminal])


def test_critic_regresses_terminal_rewards():
    rng = np.random.default_rng(4)
    agent = DdpgAgent(3, 2, DrlSection(hidden=[16], critic_lr=1e-2), seed=5)
    batch = []
    for _ in range(32):
        s, a = rng.uniform(size=3), rng.uniform(size=2)
        batch.append(Transition(s, a, float(s[0] + 2 * a[1] - 1), s, terminal=True))
    first = agent.critic_update(batch, 0.99)
    for _ in range(500):
        last = agent.critic_update(batch, 0.99)
    assert last < 0.1 * first
    assert agent.critic_update(None, 0.99) is None


def test_actor_climbs_a_fixed_critic():
    agent = DdpgAgent(3, 1, DrlSection(hidden=[], actor_lr=5e-2), seed=6)
    # Q(s, a) = a
    agent.critic.set_params([np.array([[0.0, 0.0, 0.0, 1.0]]), np.array([0.0])])
    critic_before = [p.copy() for p in agent.critic.params()]
    rng = np.random.default_rng(7)
    batch = random_batch(rng, 8, action_dim=1)
    s = batch[0].state
    start = agent.mean_action(s)[0]
    for _ in range(1000):
        agent.actor_update(batch)
    assert agent.mean_action(s)[0] > max(start, 0.9)
    assert all(np.array_equal(a, b) for a, b in zip(agent.critic.params(), critic_before))


def test_checkpoint_round_trip(tmp_path):
    agent = DdpgAgent(4, 3, DrlSection(hidden=[8]), seed=8)
    agent.refresh_tau_max(3.0)
    path = tmp_path / "agent.bbck"
    agent.save(path)

    other = DdpgAgent(4, 3, DrlSection(hidden=[8]), seed=9)
    other.load(path)
    s = np.linspace(0, 1, 4)
    assert np.array_equal(other.mean_action(s), agent.mean_action(s))
    assert other.tau_max == agent.tau_max
    for a, b in zip(other.critic_target.params(), agent.critic_target.params()):
        assert np.array_equal(a, b)

    with pytest.raises(ShapeError):
        DdpgAgent(5, 3, DrlSection(hidden=[8])).load(path)


def test_three_threshold_training_is_deterministic(tiny_cfg, tiny_traces):
    runs = []
    for _ in range(2):
        env = LinkEnvironment(tiny_traces, tiny_cfg)
        logs = train_three_threshold(env, tiny_cfg, seed=3, n_episodes=2)
        assert len(logs) == 2
        assert all(len(log.outcomes) <= tiny_cfg.env.episode_len_decisions for log in logs)
        runs.append([o.reward for log in logs for o in log.outcomes])
    assert runs[0] == runs[1]


def test_three_threshold_accepts_episode_callable(tiny_cfg, tiny_traces):
    seen = []

    def env_for(ep):
        seen.append(ep)
        return LinkEnvironment(tiny_traces, tiny_cfg)

    agent = DdpgAgent(12, 3, tiny_cfg.drl, seed=0)
    logs = train_three_threshold(env_for, tiny_cfg, seed=0, n_episodes=3, agent=agent)
    assert len(logs) == 3
    assert seen == [0, 1, 2]
    assert agent.tau_max > 0


class DataAlwaysEnv:
    """Stationary link with fixed feedback where every data step earns the same rate."""

    RATE = 1e9
    FEEDBACK = 3.0

    def __init__(self, n_decisions=40):
        self.n_decisions = n_decisions
        self.feature_size = 2
        self.state = None

    def features(self):
        return np.array([float(self.state.band), self.state.decisions / self.n_decisions])

    def reset(self, seed=0):
        self.state = BeamState(band=MMWAVE, feedback_mmwave=self.FEEDBACK, feedback_sub6=self.FEEDBACK,
                               feedback_scale=self.FEEDBACK)
        return self.state, self.features()

    @property
    def done(self):
        return self.state.decisions >= self.n_decisions

    def step(self, action):
        s = self.state
        s.decisions += 1
        if action is EnvAction.SWITCH_BAND:
            s.band = 1 - s.band
        rate = self.RATE if action is EnvAction.DATA_TRANSMISSION else 0.0
        return StepOutcome(reward=action.c_flag * rate, rate=rate, c_flag=action.c_flag, slots_consumed=1,
                           next_state_features=self.features(), done=self.done, action=action, band=s.band,
                           feedback=s.feedback(), end_slot=s.decisions - 1)


@pytest.mark.parametrize("n_seeds", [3, pytest.param(10, marks=pytest.mark.slow)])
def test_flat_learner_reaches_data_always_optimum(n_seeds):
    cfg = load_scenario(overrides=[{
        "drl": {"hidden": [16], "batch_size": 16, "buffer_capacity": 2000, "noise_start": 0.1, "noise_end": 0.01},
        "experiment": {"n_episodes": 30},
    }])
    finals = []
    for seed in range(n_seeds):
        logs = train_three_threshold(DataAlwaysEnv(), cfg, seed=seed)
        finals.append(np.mean([log.mean_reward() for log in logs[-20:]]))
    assert np.median(finals) >= 0.9 * DataAlwaysEnv.RATE
