"""Deterministic actor-critic learner and the flat three-threshold policy."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from app.config import Config
from app.environment import EpisodeLog, LinkEnvironment, thresholds_to_action
from app.errors import ShapeError
from app.neural import Adam, Mlp, opt_step, soft_update
from app.schemas import DrlSection, ScenarioConfig
from app.storage import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

# learners see rewards in Gbps
REWARD_SCALE = 1e-9
TAU_MAX_MARGIN = 1.2


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray  # normalized to [0, 1]
    reward: float
    next_state: np.ndarray
    goal: Optional[float] = None
    next_goal: Optional[float] = None
    terminal: bool = False


class ReplayBuffer:
    """Ring buffer with uniform sampling without replacement."""

    def __init__(self, capacity: int, rng: Optional[np.random.Generator] = None):
        if capacity < 1:
            raise ValueError("replay capacity must be >= 1")
        self.capacity = capacity
        self.items: List = []
        self.cursor = 0
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, item) -> None:
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.cursor] = item
        self.cursor = (self.cursor + 1) % self.capacity

    def sample_indices(self, n: int) -> Optional[np.ndarray]:
        if len(self.items) < n:
            return None
        return self.rng.choice(len(self.items), size=n, replace=False)

    def sample(self, n: int) -> Optional[list]:
        """n distinct items, or None while the buffer holds fewer than n."""
        idx = self.sample_indices(n)
        if idx is None:
            return None
        return [self.items[i] for i in idx]


def noise_schedule(cfg: DrlSection, episode: int, n_episodes: int) -> float:
    """Linear decay from noise_start to noise_end over the run."""
    if n_episodes <= 1:
        return cfg.noise_start
    frac = min(1.0, episode / (n_episodes - 1))
    return cfg.noise_start + (cfg.noise_end - cfg.noise_start) * frac


def _stack(values: Sequence, width: int) -> np.ndarray:
    if width == 0:
        return np.zeros((len(values), 0))
    return np.asarray([np.atleast_1d(v) for v in values], dtype=float).reshape(len(values), width)


class DdpgAgent:
    """Online/target actor and critic with Adam optimizers.

    The actor maps (state, goal) to a sigmoid action in [0, 1]^action_dim;
    thresholds() rescales it to [0, tau_max]. The critic maps
    (state, goal, action) to a scalar.
    """

    def __init__(self, state_dim: int, action_dim: int, cfg: DrlSection, seed: int = 0, goal_dim: int = 0):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.goal_dim = goal_dim
        self.cfg = cfg
        rng = np.random.default_rng([seed, 4])
        hidden = list(cfg.hidden)
        self.actor = Mlp([state_dim + goal_dim] + hidden + [action_dim], output="sigmoid", rng=rng)
        self.critic = Mlp([state_dim + goal_dim + action_dim] + hidden + [1], rng=rng)
        self.actor_target = self.actor.clone()
        self.critic_target = self.critic.clone()
        self.actor_opt = Adam(self.actor.params(), lr=cfg.actor_lr)
        self.critic_opt = Adam(self.critic.params(), lr=cfg.critic_lr)
        self.tau_max = cfg.tau_max_init

    def policy_input(self, states: np.ndarray, goals=None) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if self.goal_dim == 0:
            return states
        goals = np.asarray(goals, dtype=float).reshape(states.shape[0], self.goal_dim)
        return np.concatenate([states, goals], axis=1)

    def mean_action(self, state: np.ndarray, goal=None) -> np.ndarray:
        """Deterministic actor output for one state."""
        goals = None if self.goal_dim == 0 else [goal]
        return self.actor.forward(self.policy_input(state, goals))[0]

    def act(self, state: np.ndarray, goal=None, noise_std: float = 0.0,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Actor output plus Gaussian noise, clipped to [0, 1]."""
        mu = self.mean_action(state, goal)
        if noise_std > 0:
            rng = rng if rng is not None else np.random.default_rng()
            mu = mu + noise_std * rng.standard_normal(mu.shape)
        return np.clip(mu, 0.0, 1.0)

    def thresholds(self, action: np.ndarray) -> np.ndarray:
        return self.tau_max * np.asarray(action)

    def refresh_tau_max(self, max_feedback: float) -> None:
        if max_feedback > 0:
            self.tau_max = TAU_MAX_MARGIN * max_feedback

    def _unpack(self, batch: Sequence[Transition]):
        s = self.policy_input(np.stack([t.state for t in batch]), [t.goal for t in batch])
        s2 = self.policy_input(np.stack([t.next_state for t in batch]), [t.next_goal for t in batch])
        a = _stack([t.action for t in batch], self.action_dim)
        r = np.array([t.reward for t in batch], dtype=float)
        done = np.array([t.terminal for t in batch], dtype=float)
        return s, a, r, s2, done

    def bellman_targets(self, batch: Sequence[Transition], gamma: float,
                        weights: Optional[np.ndarray] = None) -> np.ndarray:
        """r + gamma * w * Q_target(s', mu_target(s')), zero bootstrap on terminal."""
        _, _, r, s2, done = self._unpack(batch)
        w = np.ones(len(batch)) if weights is None else np.asarray(weights, dtype=float)
        a2 = self.actor_target.forward(s2)
        q2 = self.critic_target.forward(np.concatenate([s2, a2], axis=1))[:, 0]
        return r + gamma * w * (1.0 - done) * q2

    def critic_update(self, batch: Optional[Sequence[Transition]], gamma: float,
                      weights: Optional[np.ndarray] = None) -> Optional[float]:
        """One step on the mean squared Bellman error; returns the pre-step loss."""
        if not batch:
            return None
        s, a, _, _, _ = self._unpack(batch)
        y = self.bellman_targets(batch, gamma, weights)
        x = np.concatenate([s, a], axis=1)
        q = self.critic.forward(x)[:, 0]
        err = q - y
        loss = float(np.mean(err ** 2))
        grads, _ = self.critic.backward(x, (2.0 * err / len(batch))[:, None])
        opt_step(self.critic_opt, self.critic.params(), grads)
        return loss

    def actor_update(self, batch: Optional[Sequence[Transition]]) -> Optional[float]:
        """Ascent on mean Q(s, mu(s)); returns the actor gradient norm."""
        if not batch:
            return None
        s, _, _, _, _ = self._unpack(batch)
        mu = self.actor.forward(s)
        x = np.concatenate([s, mu], axis=1)
        _, dx = self.critic.backward(x, np.full((len(batch), 1), 1.0 / len(batch)))
        dq_da = dx[:, s.shape[1]:]
        grads, _ = self.actor.backward(s, -dq_da)
        opt_step(self.actor_opt, self.actor.params(), grads)
        return float(np.sqrt(sum(np.sum(g * g) for g in grads)))

    def soft_update_targets(self, eta: Optional[float] = None) -> None:
        eta = self.cfg.eta if eta is None else eta
        soft_update(self.actor_target, self.actor, eta)
        soft_update(self.critic_target, self.critic, eta)

    def train_step(self, buffer: ReplayBuffer) -> Optional[float]:
        batch = buffer.sample(self.cfg.batch_size)
        if batch is None:
            return None
        loss = self.critic_update(batch, self.cfg.gamma)
        self.actor_update(batch)
        self.soft_update_targets()
        return loss

    def networks(self) -> dict:
        return {"actor": self.actor, "critic": self.critic,
                "actor_target": self.actor_target, "critic_target": self.critic_target}

    def save(self, path: Union[str, Path], prefix: str = "") -> None:
        save_checkpoint(self.state_arrays(prefix), path)

    def state_arrays(self, prefix: str = "") -> dict:
        arrays = {f"{prefix}tau_max": np.array([self.tau_max])}
        for name, net in self.networks().items():
            for i, p in enumerate(net.params()):
                arrays[f"{prefix}{name}.{i}"] = p
        return arrays

    def load(self, path: Union[str, Path], prefix: str = "") -> None:
        self.load_arrays(load_checkpoint(path), prefix)

    def load_arrays(self, arrays: dict, prefix: str = "") -> None:
        for name, net in self.networks().items():
            params = []
            for i in range(len(net.params())):
                key = f"{prefix}{name}.{i}"
                if key not in arrays:
                    raise ShapeError(f"checkpoint lacks {key}")
                params.append(arrays[key])
            net.set_params(params)
        self.tau_max = float(arrays[f"{prefix}tau_max"][0])


def run_three_threshold_episode(env: LinkEnvironment, agent: DdpgAgent, buffer: ReplayBuffer,
                                noise_std: float, rng: np.random.Generator, seed: int,
                                learn: bool = True) -> EpisodeLog:
    """One episode of the flat learner: act, bucket thresholds, step, store, update."""
    state, x = env.reset(seed)
    log = EpisodeLog()
    while not env.done:
        a = agent.act(x, noise_std=noise_std, rng=rng)
        action = thresholds_to_action(state.band, state.feedback(), agent.thresholds(a), "three_threshold")
        out = env.step(action)
        log.outcomes.append(out)
        buffer.push(Transition(x, a, out.reward * REWARD_SCALE, out.next_state_features, terminal=out.done))
        if learn:
            agent.train_step(buffer)
        x = out.next_state_features
    agent.refresh_tau_max(env.state.feedback_scale)
    return log


def train_three_threshold(env: Union[LinkEnvironment, Callable[[int], LinkEnvironment]], cfg: ScenarioConfig,
                          seed: int, n_episodes: Optional[int] = None,
                          agent: Optional[DdpgAgent] = None) -> List[EpisodeLog]:
    """Flat DDPG over three thresholds; one EpisodeLog per episode.

    env may be a fixed environment or a callable returning the environment of
    a given episode index. Pass agent to keep a handle on the trained networks.
    """
    n_episodes = cfg.experiment.n_episodes if n_episodes is None else n_episodes
    env_for = env if callable(env) else (lambda _ep: env)
    first = env_for(0)
    agent = agent or DdpgAgent(first.feature_size, 3, cfg.drl, seed)
    buffer = ReplayBuffer(cfg.drl.buffer_capacity, np.random.default_rng([seed, 5]))
    rng = np.random.default_rng([seed, 6])
    logs: List[EpisodeLog] = []
    for ep in tqdm(range(n_episodes), desc=f"three_threshold seed={seed}", disable=not Config.PROGRESS, leave=False):
        episode_env = first if ep == 0 else env_for(ep)
        noise = noise_schedule(cfg.drl, ep, n_episodes)
        logs.append(run_three_threshold_episode(episode_env, agent, buffer, noise, rng, seed * 100_003 + ep))
        logger.debug(f"three_threshold seed={seed} episode={ep} mean reward {logs[-1].mean_reward():.3e}")
    return logs
