"""Genie-aided and greedy oracle policies.

Both read the true channel at the last slot of the next data span, configure
beamformers instantly at zero overhead and transmit. The genie compares both
bands; the greedy policy is the genie restricted to mmWave.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Union

import numpy as np
from tqdm import tqdm

from app import linalg, mmwave, sub6
from app.config import Config
from app.environment import MMWAVE, SUB6, EnvAction, EpisodeLog, LinkEnvironment, StepOutcome
from app.errors import SingularityError

logger = logging.getLogger(__name__)


@dataclass
class OracleChoice:
    action: EnvAction
    band: int
    rate: float  # bps at the data span's last slot
    mm_beamformers: Optional[mmwave.HybridBeamformers] = None
    sub6_precoders: Optional[tuple] = None  # (f_bb, w_bb, indices)


def _mmwave_candidates(env: LinkEnvironment, slot: int, analog: mmwave.HybridBeamformers) -> list:
    """Analog-only beams and unquantized digital beamformers on top of them."""
    frame = env.traces.mmwave.frame(slot)
    candidates = [analog]
    hbar = np.conj(analog.w_rf.T)[None] @ frame @ analog.f_rf[None]
    try:
        candidates.append(mmwave.digital_beamformers(hbar, analog, None, env.cfg.mmwave.n_s))
    except SingularityError:
        logger.debug(f"slot {slot}: effective channel singular for tx={analog.tx_indices} rx={analog.rx_indices}")
    return candidates


def best_mmwave_beamformers(env: LinkEnvironment, slot: int) -> tuple:
    """Best of analog-only and unquantized digital beamformers over the searched beams.

    With genie_search "sweep" the beams come from one noiseless greedy sweep;
    with "exhaustive" every beam assignment of the codebooks is tried.

    Returns:
        (beamformers or None, rate in bps)
    """
    mm = env.cfg.mmwave
    if env.cfg.experiment.genie_search == "exhaustive":
        assignments = mmwave.beam_assignments(env.f_cb, env.w_cb, mm.n_bs_rf, mm.n_ue_rf)
    else:
        trace = env.traces.mmwave
        snr = trace.snr(slot, env.power_w, env.noise[MMWAVE])
        sweep = mmwave.analog_sweep(trace.frame(slot), env.f_cb, env.w_cb, mm.n_bs_rf, mm.n_ue_rf, snr)
        assignments = [(sweep.tx_indices, sweep.rx_indices)]

    best, best_rate = None, -np.inf
    for tx, rx in assignments:
        analog = mmwave.beam_pair_beamformers(env.f_cb.vectors[tx].T, env.w_cb.vectors[rx].T, tx, rx,
                                              mm.n_subcarriers, mm.n_s)
        for bf in _mmwave_candidates(env, slot, analog):
            rate, _ = env.mmwave_rate(slot, bf)
            if rate > best_rate:
                best, best_rate = bf, rate
    return best, float(best_rate)


def best_sub6_precoders(env: LinkEnvironment, slot: int) -> tuple:
    """Rate-maximizing PMI entry per subcarrier with ZF on the true channel.

    Returns:
        ((f_bb, w_bb, indices) or None, rate in bps)
    """
    trace = env.traces.sub6
    frame = trace.frame(slot)
    snr = trace.snr(slot, env.power_w, env.noise[SUB6])
    _, indices = sub6.best_rate_per_subcarrier(frame, env.pmi, snr)
    f_bb = env.pmi.precoders[indices]
    try:
        w_bb = linalg.normalize_columns(sub6.zf_combiner(frame @ f_bb))
    except SingularityError:
        return None, 0.0
    rate, _ = env.sub6_rate(slot, f_bb, w_bb)
    return (f_bb, w_bb, np.asarray(indices)), rate


def genie_policy(env: LinkEnvironment, restrict_band: Optional[int] = None) -> Optional[OracleChoice]:
    """Best data configuration for the next span, or None when the span overruns the trace.

    Ties go to sub-6.
    """
    slot = env.data_end_slot()
    if slot is None:
        return None
    choice = OracleChoice(EnvAction.DATA_TRANSMISSION, SUB6, 0.0)
    if restrict_band in (None, SUB6):
        precoders, rate = best_sub6_precoders(env, slot)
        choice = OracleChoice(EnvAction.DATA_TRANSMISSION, SUB6, rate, sub6_precoders=precoders)
    if restrict_band in (None, MMWAVE):
        bf, rate = best_mmwave_beamformers(env, slot)
        if restrict_band == MMWAVE or rate > choice.rate:
            choice = OracleChoice(EnvAction.DATA_TRANSMISSION, MMWAVE, rate, mm_beamformers=bf)
    return choice


def greedy_policy(env: LinkEnvironment) -> Optional[OracleChoice]:
    """Genie restricted to mmWave."""
    return genie_policy(env, restrict_band=MMWAVE)


def oracle_step(env: LinkEnvironment, restrict_band: Optional[int] = None) -> StepOutcome:
    """Install the oracle configuration at zero cost and run one data step."""
    choice = genie_policy(env, restrict_band)
    if choice is not None:
        if choice.band == MMWAVE and choice.mm_beamformers is not None:
            env.install_mmwave(choice.mm_beamformers)
        elif choice.band == SUB6 and choice.sub6_precoders is not None:
            env.install_sub6(*choice.sub6_precoders)
        env.force_band(choice.band)
    return env.step(EnvAction.DATA_TRANSMISSION)


def run_oracle_episode(env: LinkEnvironment, restrict_band: Optional[int] = None, seed: int = 0) -> EpisodeLog:
    env.reset(seed)
    log = EpisodeLog()
    while not env.done:
        log.outcomes.append(oracle_step(env, restrict_band))
    return log


def run_oracle(env: Union[LinkEnvironment, Callable[[int], LinkEnvironment]], n_episodes: int, seed: int,
               restrict_band: Optional[int] = None) -> List[EpisodeLog]:
    """Genie (restrict_band None) or greedy (MMWAVE) over n_episodes."""
    env_for = env if callable(env) else (lambda _ep: env)
    name = "greedy" if restrict_band == MMWAVE else "genie"
    first = env_for(0)
    if first.cfg.experiment.genie_search == "exhaustive":
        mm = first.cfg.mmwave
        count = mmwave.assignment_count(first.f_cb, first.w_cb, mm.n_bs_rf, mm.n_ue_rf)
        logger.info(f"{name} seed={seed}: exhaustive beam search over {count} assignments per decision")
    logs = []
    for ep in tqdm(range(n_episodes), desc=f"{name} seed={seed}", disable=not Config.PROGRESS, leave=False):
        logs.append(run_oracle_episode(first if ep == 0 else env_for(ep), restrict_band, seed * 100_003 + ep))
    return logs
