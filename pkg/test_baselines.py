"""Tests for the genie and greedy oracle policies."""

import itertools

import numpy as np
import pytest

from app import linalg, mmwave, sub6
from app.baselines import (
    best_mmwave_beamformers,
    best_sub6_precoders,
    genie_policy,
    greedy_policy,
    oracle_step,
    run_oracle,
    run_oracle_episode,
)
from app.channel import generate_traces
from app.environment import MMWAVE, SUB6, EnvAction, LinkEnvironment
from app.errors import SingularityError
from app.scenario import load_scenario
from conftest import TINY

# 4x2 array, 4-entry codebooks on both sides, 2 RF chains
SMALL_MMWAVE = {"mmwave": {"n_bs": 4, "n_ue": 2, "nu_bs": 4, "nu_ue": 4, "n_bs_rf": 2, "n_ue_rf": 2, "n_s": 2}}


def exhaustive_sub6_rate(env, slot):
    frame = env.traces.sub6.frame(slot)
    cb = env.pmi
    best = -np.inf
    for combo in itertools.product(range(cb.size), repeat=frame.shape[0]):
        f_bb = cb.precoders[list(combo)]
        try:
            w_bb = linalg.normalize_columns(sub6.zf_combiner(frame @ f_bb))
        except SingularityError:
            continue
        rate, _ = env.sub6_rate(slot, f_bb, w_bb)
        best = max(best, rate)
    return best


def exhaustive_mmwave_rates(env, slot):
    """(best analog-only rate, best rate with unquantized digital beamformers allowed)."""
    mm = env.cfg.mmwave
    frame = env.traces.mmwave.frame(slot)
    analog_best = best = -np.inf
    for tx in itertools.permutations(range(env.f_cb.size), mm.n_bs_rf):
        for rx in itertools.permutations(range(env.w_cb.size), mm.n_ue_rf):
            f_rf = env.f_cb.vectors[list(tx)].T
            w_rf = env.w_cb.vectors[list(rx)].T
            analog = mmwave.beam_pair_beamformers(f_rf, w_rf, list(tx), list(rx), mm.n_subcarriers, mm.n_s)
            rate, _ = env.mmwave_rate(slot, analog)
            analog_best = max(analog_best, rate)
            hbar = np.conj(w_rf.T)[None] @ frame @ f_rf[None]
            try:
                digital = mmwave.digital_beamformers(hbar, analog, None, mm.n_s)
                rate = max(rate, env.mmwave_rate(slot, digital)[0])
            except SingularityError:
                pass
            best = max(best, rate)
    return analog_best, best


def test_genie_dominates_greedy_step_by_step(tiny_cfg, tiny_traces):
    genie = run_oracle_episode(LinkEnvironment(tiny_traces, tiny_cfg))
    greedy = run_oracle_episode(LinkEnvironment(tiny_traces, tiny_cfg), restrict_band=MMWAVE)
    assert len(genie.outcomes) == len(greedy.outcomes) == tiny_cfg.env.episode_len_decisions
    for g, m in zip(genie.outcomes, greedy.outcomes):
        assert g.action is m.action is EnvAction.DATA_TRANSMISSION
        assert g.reward >= m.reward * (1 - 1e-12)
        assert m.band == MMWAVE
    assert genie.mean_rate() >= greedy.mean_rate() * (1 - 1e-12)
    assert genie.training_fraction() == 0.0


def test_genie_reward_is_the_better_band(tiny_env):
    tiny_env.reset()
    choice = genie_policy(tiny_env)
    greedy = greedy_policy(tiny_env)
    sub6_only = genie_policy(tiny_env, restrict_band=SUB6)
    assert greedy.band == MMWAVE and sub6_only.band == SUB6
    assert choice.rate == pytest.approx(max(greedy.rate, sub6_only.rate))
    assert choice.band == (MMWAVE if greedy.rate > sub6_only.rate else SUB6)


def test_sub6_oracle_matches_exhaustive_search(tiny_env):
    """Every combination of per-subcarrier PMI entries on a small instance."""
    tiny_env.reset()
    _, rate = best_sub6_precoders(tiny_env, 5)
    assert rate == pytest.approx(exhaustive_sub6_rate(tiny_env, 5), rel=1e-9)


def test_oracle_stops_at_trace_end(tiny_env):
    log = run_oracle_episode(tiny_env)
    assert tiny_env.done
    assert genie_policy(tiny_env) is None
    assert sum(o.slots_consumed for o in log.outcomes) == tiny_env.n_slots


def test_run_oracle_over_episodes(tiny_cfg, tiny_traces):
    seen = []

    def env_for(ep):
        seen.append(ep)
        return LinkEnvironment(tiny_traces, tiny_cfg)

    logs = run_oracle(env_for, 2, seed=0)
    assert len(logs) == 2
    assert seen == [0, 1]
    assert [o.reward for o in logs[0].outcomes] == [o.reward for o in logs[1].outcomes]


@pytest.mark.parametrize("decisions", [12, pytest.param(200, marks=pytest.mark.slow)])
def test_oracles_match_brute_force_on_small_mmwave_instance(decisions):
    cfg = load_scenario(overrides=[TINY, SMALL_MMWAVE, {
        "env": {"m_dt": 1, "episode_len_decisions": decisions},
        "experiment": {"genie_search": "exhaustive"},
    }])
    traces = generate_traces(cfg, seed=3)
    env = LinkEnvironment(traces, cfg)
    sweep_env = LinkEnvironment(traces, load_scenario(overrides=[TINY, SMALL_MMWAVE, {
        "env": {"m_dt": 1, "episode_len_decisions": decisions}}]))
    assert mmwave.assignment_count(env.f_cb, env.w_cb, 2, 2) == 144

    env.reset()
    checked = 0
    while not env.done:
        slot = env.data_end_slot()
        analog_best, mm_best = exhaustive_mmwave_rates(env, slot)

        greedy = greedy_policy(env)
        assert greedy.band == MMWAVE
        assert greedy.rate == pytest.approx(mm_best, rel=1e-12)
        assert greedy.rate >= analog_best * (1 - 1e-12)

        genie = genie_policy(env)
        assert genie.rate == pytest.approx(max(mm_best, exhaustive_sub6_rate(env, slot)), rel=1e-12)

        _, swept = best_mmwave_beamformers(sweep_env, slot)
        assert swept <= mm_best * (1 + 1e-12)

        oracle_step(env)
        checked += 1
    assert checked == decisions


def test_greedy_episode_never_uses_sub6():
    cfg = load_scenario(overrides=[TINY, SMALL_MMWAVE, {"experiment": {"genie_search": "exhaustive"}}])
    env = LinkEnvironment(generate_traces(cfg, seed=4), cfg)
    log = run_oracle_episode(env, restrict_band=MMWAVE)
    assert log.outcomes and all(o.band == MMWAVE for o in log.outcomes)
    assert all(o.action is EnvAction.DATA_TRANSMISSION for o in log.outcomes)
