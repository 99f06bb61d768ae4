"""Two-level learner: an upper policy picks the band goal, a lower policy picks thresholds.

The upper level decides every m_upper lower decisions unless round skipping
keeps the current goal for another period. Upper replay is corrected for the
drift of the lower policy either by an importance weight on the bootstrap
term or by relabeling the stored goal.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from app.config import Config
from app.ddpg import REWARD_SCALE, DdpgAgent, ReplayBuffer, Transition, noise_schedule
from app.environment import EnvAction, EpisodeLog, LinkEnvironment, thresholds_to_action
from app.schemas import ScenarioConfig
from app.storage import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

MIN_SIGMA = 1e-6


@dataclass
class LowerStep:
    state: np.ndarray
    goal: int
    action: np.ndarray  # normalized thresholds as acted
    base_mean: np.ndarray  # deterministic lower output when acted
    reward: float  # c * R in bps
    next_state: np.ndarray


@dataclass
class UpperTransition:
    """One upper decision period, truncated to its last min(M_upper, M_RF) steps."""
    states: np.ndarray  # (L, F)
    goals: np.ndarray  # (L,)
    actions: np.ndarray  # (L, 2)
    base_means: np.ndarray  # (L, 2)
    rewards_env: np.ndarray  # (L,) per-step r / M_upper
    terminal_state: np.ndarray
    upper_reward: float  # sum of r / M_upper over the whole period
    upper_state: np.ndarray
    next_upper_state: np.ndarray
    goal_action: float  # upper actor output as acted
    noise_std: float  # lower exploration std when logged
    terminal: bool = False

    @property
    def logged_goal(self) -> int:
        return int(self.goals[0])

    def __len__(self) -> int:
        return int(self.states.shape[0])


@dataclass
class AvailabilityEstimator:
    """Laplace-smoothed probability that a slot starts a new decision."""
    available: int = 0
    observed: int = 0

    def record(self, slots_consumed: int) -> None:
        if slots_consumed > 0:
            self.available += 1
            self.observed += slots_consumed

    @property
    def q(self) -> float:
        return (self.available + 1) / (self.observed + 2)


@dataclass
class GoalState:
    current_goal: int
    slots_in_goal: int = 0
    q_estimator: AvailabilityEstimator = field(default_factory=AvailabilityEstimator)


def aggregate_upper(window: Sequence[LowerStep], m_upper: int, m_rf: int, upper_state: np.ndarray,
                    next_upper_state: np.ndarray, goal_action: float, noise_std: float,
                    terminal: bool = False) -> UpperTransition:
    """Pack a window of lower steps into one upper transition.

    The upper reward is sum(r) / m_upper over the full window; the stored
    sequences keep the last min(m_upper, m_rf) steps.
    """
    if not window:
        raise ValueError("cannot aggregate an empty window")
    keep = list(window)[-min(m_upper, m_rf):]
    rewards = np.array([s.reward for s in keep], dtype=float) / m_upper
    total = float(sum(s.reward for s in window)) / m_upper
    return UpperTransition(
        states=np.stack([s.state for s in keep]),
        goals=np.array([s.goal for s in keep], dtype=int),
        actions=np.stack([s.action for s in keep]),
        base_means=np.stack([s.base_mean for s in keep]),
        rewards_env=rewards,
        terminal_state=np.asarray(window[-1].next_state),
        upper_reward=total,
        upper_state=np.asarray(upper_state, dtype=float),
        next_upper_state=np.asarray(next_upper_state, dtype=float),
        goal_action=float(goal_action),
        noise_std=noise_std,
        terminal=terminal,
    )


def _log_ratio(transition: UpperTransition, means_now: np.ndarray, base_means: np.ndarray) -> float:
    sigma = max(transition.noise_std, MIN_SIGMA)
    a = transition.actions
    return float(np.sum((a - base_means) ** 2 - (a - means_now) ** 2) / (2.0 * sigma ** 2))


def _lower_means(lower: DdpgAgent, states: np.ndarray, goals: np.ndarray) -> np.ndarray:
    return lower.actor.forward(lower.policy_input(states, goals.astype(float)))


def importance_weight(transition: UpperTransition, lower_now: DdpgAgent,
                      base_means: Optional[np.ndarray] = None, goals: Optional[np.ndarray] = None,
                      w_clip: Tuple[float, float] = (1e-3, 1e3)) -> float:
    """Gaussian likelihood ratio of the logged lower actions, current over logging-time policy.

    Both densities are N(mu(s, g), noise_std^2) around the respective
    deterministic outputs. goals replaces the logged goals when given.
    """
    goals = transition.goals if goals is None else np.asarray(goals)
    base = transition.base_means if base_means is None else base_means
    means_now = _lower_means(lower_now, transition.states, goals)
    lo, hi = w_clip
    log_w = min(max(_log_ratio(transition, means_now, base), math.log(lo)), math.log(hi))
    return math.exp(log_w)


def goal_candidates(transition: UpperTransition, lower_now: DdpgAgent,
                    w_clip: Tuple[float, float] = (1e-3, 1e3)) -> Dict[int, float]:
    """Importance weight with every goal in the window set to g, for g in {0, 1}."""
    n = len(transition)
    return {g: importance_weight(transition, lower_now, goals=np.full(n, g), w_clip=w_clip) for g in (0, 1)}


def relabel_goal(transition: UpperTransition, lower_now: DdpgAgent,
                 w_clip: Tuple[float, float] = (1e-3, 1e3)) -> int:
    """Goal minimizing (1 - w(g))^2; ties keep the logged goal."""
    weights = goal_candidates(transition, lower_now, w_clip)
    logged = transition.logged_goal
    other = 1 - logged
    if (1.0 - weights[other]) ** 2 < (1.0 - weights[logged]) ** 2:
        return other
    return logged


def _as_flat(transition: UpperTransition, action: Optional[float] = None) -> Transition:
    return Transition(transition.upper_state, np.array([transition.goal_action if action is None else action]),
                      transition.upper_reward * REWARD_SCALE, transition.next_upper_state,
                      terminal=transition.terminal)


def upper_critic_update(batch: Optional[Sequence[UpperTransition]], upper: DdpgAgent, lower: DdpgAgent,
                        gamma: float, correction: str,
                        w_clip: Tuple[float, float] = (1e-3, 1e3)) -> Optional[float]:
    """Upper critic step on a minibatch drawn from upper replay.

    direct_is scales the bootstrap term by the importance weight; relabel
    swaps in the corrected goal as the stored upper action with w = 1; none
    trains on the data as logged.
    """
    if not batch:
        return None
    if correction == "relabel":
        flat = [_as_flat(t, float(relabel_goal(t, lower, w_clip))) for t in batch]
        return upper.critic_update(flat, gamma)
    flat = [_as_flat(t) for t in batch]
    if correction == "direct_is":
        weights = np.array([importance_weight(t, lower, w_clip=w_clip) for t in batch])
        return upper.critic_update(flat, gamma, weights)
    return upper.critic_update(flat, gamma)


def upper_actor_update(batch: Optional[Sequence[UpperTransition]], upper: DdpgAgent) -> Optional[float]:
    """Policy gradient through the upper critic's goal input."""
    if not batch:
        return None
    return upper.actor_update([_as_flat(t) for t in batch])


def non_skip_probability(q: float, m_rf: int) -> float:
    if not 0 < q <= 1:
        raise ValueError(f"availability estimate must lie in (0, 1], got {q}")
    return min(1.0, (m_rf / (2.0 * m_rf - 1.0)) / q)


def round_skip(q: float, m_rf: int, rng: np.random.Generator) -> bool:
    """True when the upper decision epoch is skipped and the goal kept."""
    return bool(rng.random() >= non_skip_probability(q, m_rf))


@dataclass
class HrlAgents:
    upper: DdpgAgent
    lower: DdpgAgent
    upper_buffer: ReplayBuffer
    lower_buffer: ReplayBuffer

    def save(self, path: Union[str, Path]) -> None:
        arrays = self.upper.state_arrays("upper.")
        arrays.update(self.lower.state_arrays("lower."))
        save_checkpoint(arrays, path)

    def load(self, path: Union[str, Path]) -> None:
        arrays = load_checkpoint(path)
        self.upper.load_arrays(arrays, "upper.")
        self.lower.load_arrays(arrays, "lower.")


def window_size(cfg: ScenarioConfig, m_rf: int) -> int:
    return min(cfg.hrl.m_upper, m_rf)


def make_agents(feature_size: int, m_rf: int, cfg: ScenarioConfig, seed: int) -> HrlAgents:
    hrl = cfg.hrl
    upper = DdpgAgent(window_size(cfg, m_rf) * feature_size, 1, hrl.upper, seed=seed * 2 + 1)
    lower = DdpgAgent(feature_size, 2, hrl.lower, seed=seed * 2, goal_dim=1)
    return HrlAgents(upper, lower,
                     ReplayBuffer(hrl.upper.buffer_capacity, np.random.default_rng([seed, 7])),
                     ReplayBuffer(hrl.lower.buffer_capacity, np.random.default_rng([seed, 8])))


def _flatten(history: Deque[np.ndarray], size: int, feature_size: int) -> np.ndarray:
    out = np.zeros(size * feature_size)
    stacked = np.concatenate(list(history)) if history else np.zeros(0)
    out[out.size - stacked.size:] = stacked
    return out


def run_hrl_episode(env: LinkEnvironment, agents: HrlAgents, cfg: ScenarioConfig, rng: np.random.Generator,
                    seed: int = 0, upper_noise: float = 0.0, lower_noise: float = 0.0,
                    learn: bool = True) -> EpisodeLog:
    """One episode of the two-level learner.

    Scatter rows are (decision, tau_a, tau_d, feedback, action, band) with
    thresholds in bps/Hz and feedback as seen before the decision.
    """
    hrl = cfg.hrl
    size = window_size(cfg, env.m_rf)
    skipping = hrl.round_skip == "on" and hrl.period_mode == "adaptive"
    upper_learns = learn and hrl.upper_updates
    state, x = env.reset(seed)
    history: Deque[np.ndarray] = deque([x], maxlen=size)
    log = EpisodeLog()

    def choose_goal(obs: np.ndarray) -> Tuple[int, float]:
        if hrl.pinned_goal is not None:
            return hrl.pinned_goal, float(hrl.pinned_goal)
        logit = float(agents.upper.act(obs, noise_std=upper_noise, rng=rng)[0])
        return int(logit >= 0.5), logit

    def apply_goal(goal: int, features: np.ndarray) -> np.ndarray:
        """Switch band if the goal asks for it; features the next lower decision sees."""
        if env.state.band != goal and not env.done:
            out = env.step(EnvAction.SWITCH_BAND)
            log.outcomes.append(out)
            goal_state.q_estimator.record(out.slots_consumed)
            history.append(out.next_state_features)
            return out.next_state_features
        return features

    obs_start = _flatten(history, size, env.feature_size)
    goal, logit = choose_goal(obs_start)
    goal_state = GoalState(current_goal=goal)
    x = apply_goal(goal, x)
    window: List[LowerStep] = []
    # held until the goal and state of the following lower decision are known
    pending: Optional[Transition] = None

    def flush_lower(next_x: np.ndarray, next_goal: int) -> None:
        agents.lower_buffer.push(replace(pending, next_state=next_x, next_goal=float(next_goal),
                                         terminal=pending.terminal or env.done))
        if learn:
            agents.lower.train_step(agents.lower_buffer)

    def close_epoch(terminal: bool) -> np.ndarray:
        obs_end = _flatten(history, size, env.feature_size)
        agents.upper_buffer.push(aggregate_upper(window, hrl.m_upper, env.m_rf, obs_start, obs_end,
                                                 logit, lower_noise, terminal))
        if upper_learns:
            batch = agents.upper_buffer.sample(hrl.upper.batch_size)
            if batch is not None:
                upper_critic_update(batch, agents.upper, agents.lower, hrl.upper.gamma, hrl.correction, hrl.w_clip)
                upper_actor_update(batch, agents.upper)
                agents.upper.soft_update_targets()
        return obs_end

    while not env.done:
        if len(window) >= hrl.m_upper:
            if not (skipping and round_skip(goal_state.q_estimator.q, env.m_rf, rng)):
                obs_start = close_epoch(terminal=False)
                window = []
                goal, logit = choose_goal(obs_start)
                if goal != goal_state.current_goal:
                    goal_state.current_goal = goal
                    goal_state.slots_in_goal = 0
                x = apply_goal(goal, x)
                if env.done:
                    break

        if pending is not None:
            flush_lower(x, goal)
        s = env.state
        feedback = s.feedback()
        base = agents.lower.mean_action(x, goal)
        a = agents.lower.act(x, goal, noise_std=lower_noise, rng=rng)
        thresholds = agents.lower.thresholds(a)
        action = thresholds_to_action(s.band, feedback, thresholds, "hrl_lower")
        out = env.step(action)
        log.outcomes.append(out)
        tau_a, tau_d = np.sort(thresholds)
        log.scatter.append((s.decisions, float(tau_a), float(tau_d), feedback, action.value, out.band))

        pending = Transition(x, a, out.reward * REWARD_SCALE, out.next_state_features,
                             goal=float(goal), next_goal=float(goal), terminal=out.done)
        window.append(LowerStep(x, goal, a, base, out.reward, out.next_state_features))
        goal_state.q_estimator.record(out.slots_consumed)
        goal_state.slots_in_goal += out.slots_consumed
        history.append(out.next_state_features)
        x = out.next_state_features

    if pending is not None:
        flush_lower(x, goal)
    if window:
        close_epoch(terminal=True)
    agents.lower.refresh_tau_max(env.state.feedback_scale)
    return log


def train_hrl(env: Union[LinkEnvironment, Callable[[int], LinkEnvironment]], cfg: ScenarioConfig, seed: int,
              n_episodes: Optional[int] = None, agents: Optional[HrlAgents] = None) -> List[EpisodeLog]:
    """Run the two-level learner over n_episodes; one EpisodeLog per episode."""
    n_episodes = cfg.experiment.n_episodes if n_episodes is None else n_episodes
    env_for = env if callable(env) else (lambda _ep: env)
    first = env_for(0)
    agents = agents or make_agents(first.feature_size, first.m_rf, cfg, seed)
    rng = np.random.default_rng([seed, 9])
    logs: List[EpisodeLog] = []
    for ep in tqdm(range(n_episodes), desc=f"hrl seed={seed}", disable=not Config.PROGRESS, leave=False):
        episode_env = first if ep == 0 else env_for(ep)
        logs.append(run_hrl_episode(
            episode_env, agents, cfg, rng, seed=seed * 100_003 + ep,
            upper_noise=noise_schedule(cfg.hrl.upper, ep, n_episodes),
            lower_noise=noise_schedule(cfg.hrl.lower, ep, n_episodes),
        ))
        logger.debug(f"hrl seed={seed} episode={ep} mean reward {logs[-1].mean_reward():.3e}")
    return logs
