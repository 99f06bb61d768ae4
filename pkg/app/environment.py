"""Slot-level link environment for joint band assignment and beam management.

Each step executes one action over its full slot span: training actions
consume their overhead and earn nothing, data transmission consumes M_DT
slots and earns the rate of the active band evaluated at the last slot of
the span.

Feature layout (all in [0, 1]):

    [0]                      band flag (1 = mmwave)
    [1]                      mmWave feedback / running max feedback
    [2]                      sub-6 feedback / running max feedback
    [3 : 3+R_bs]             BS analog beam index / nu_BS, per RF chain
    [.. : ..+R_ue]           UE analog beam index / nu_UE, per RF chain
    next                     mean RVQ index / 2**kappa_RVQ
    next                     mean PMI index / nu_PMI
    next                     mmWave slots since training / M_RF, clipped
    next                     sub-6 slots since training / M_RF, clipped
    last                     mode flag (1 = data)
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from app import mmwave, sub6
from app.channel import TracePair, noise_variance_w
from app.config import Config
from app.errors import ConfigurationError, InvalidActionError, SingularityError
from app.rvq import RvqCodebook, cached_rvq_codebook
from app.schemas import ScenarioConfig

logger = logging.getLogger(__name__)

SUB6 = 0
MMWAVE = 1


class EnvAction(str, Enum):
    SWITCH_BAND = "switch_band"
    ANALOG_TRAINING = "analog_training"
    DIGITAL_TRAINING = "digital_training"
    DATA_TRANSMISSION = "data_transmission"

    @property
    def c_flag(self) -> int:
        return 1 if self is EnvAction.DATA_TRANSMISSION else 0


@dataclass
class BeamState:
    band: int
    mode: int = 0
    tx_indices: List[int] = field(default_factory=list)
    rx_indices: List[int] = field(default_factory=list)
    feedback_mmwave: float = 0.0
    feedback_sub6: float = 0.0
    rvq_indices: Optional[np.ndarray] = None
    pmi_indices: Optional[np.ndarray] = None
    slots_remaining_in_mode: int = 0
    cursor: int = 0
    decisions: int = 0
    last_trained: List[Optional[int]] = field(default_factory=lambda: [None, None])
    stale: List[bool] = field(default_factory=lambda: [False, False])
    feedback_scale: float = 0.0

    def feedback(self, band: Optional[int] = None) -> float:
        band = self.band if band is None else band
        return self.feedback_mmwave if band == MMWAVE else self.feedback_sub6


@dataclass
class StepOutcome:
    reward: float
    rate: float
    c_flag: int
    slots_consumed: int
    next_state_features: np.ndarray
    done: bool
    action: EnvAction
    band: int
    feedback: float
    end_slot: int


@dataclass(frozen=True)
class FeatureLayout:
    nu_bs: int
    nu_ue: int
    n_bs_rf: int
    n_ue_rf: int
    rvq_size: int
    nu_pmi: int
    m_rf: int

    @property
    def size(self) -> int:
        return 8 + self.n_bs_rf + self.n_ue_rf


def featurize(state: BeamState, layout: FeatureLayout) -> np.ndarray:
    """Fixed-length state vector; see the module docstring for the layout."""
    scale = state.feedback_scale if state.feedback_scale > 0 else 1.0
    tx = np.zeros(layout.n_bs_rf)
    rx = np.zeros(layout.n_ue_rf)
    tx[: len(state.tx_indices)] = np.asarray(state.tx_indices, dtype=float) / layout.nu_bs
    rx[: len(state.rx_indices)] = np.asarray(state.rx_indices, dtype=float) / layout.nu_ue
    rvq = 0.0 if state.rvq_indices is None else float(np.mean(state.rvq_indices)) / layout.rvq_size
    pmi = 0.0 if state.pmi_indices is None else float(np.mean(state.pmi_indices)) / layout.nu_pmi

    def since(band: int) -> float:
        last = state.last_trained[band]
        if last is None:
            return 1.0
        return min(1.0, (state.cursor - last) / layout.m_rf)

    head = [float(state.band),
            min(1.0, state.feedback_mmwave / scale),
            min(1.0, state.feedback_sub6 / scale)]
    tail = [rvq, pmi, since(MMWAVE), since(SUB6), float(state.mode)]
    return np.concatenate([head, tx, rx, tail])


def thresholds_to_action(band: int, feedback: float, thresholds: Sequence[float], scheme: str) -> EnvAction:
    """Map feedback and learned thresholds to an environment action.

    three_threshold takes (tau_switch, tau_rf, tau_bb); at sub-6 tau_rf is
    masked. hrl_lower takes (tau_a, tau_d); at sub-6 tau_a is masked.
    Thresholds are sorted ascending first.
    """
    t = np.sort(np.asarray(thresholds, dtype=float))
    if scheme == "three_threshold":
        if len(t) != 3:
            raise ConfigurationError("three_threshold expects 3 thresholds")
        low, mid, high = t
        if feedback < low:
            return EnvAction.SWITCH_BAND
        if band == MMWAVE:
            if feedback < mid:
                return EnvAction.ANALOG_TRAINING
            if feedback < high:
                return EnvAction.DIGITAL_TRAINING
            return EnvAction.DATA_TRANSMISSION
        return EnvAction.DIGITAL_TRAINING if feedback < high else EnvAction.DATA_TRANSMISSION
    if scheme == "hrl_lower":
        if len(t) != 2:
            raise ConfigurationError("hrl_lower expects 2 thresholds")
        tau_a, tau_d = t
        if band == MMWAVE and feedback < tau_a:
            return EnvAction.ANALOG_TRAINING
        if feedback < tau_d:
            return EnvAction.DIGITAL_TRAINING
        return EnvAction.DATA_TRANSMISSION
    raise ConfigurationError(f"unknown threshold scheme {scheme!r}")


def episode_return(outcomes: Sequence[StepOutcome]) -> float:
    """Sum of c * R over an episode."""
    return float(sum(o.c_flag * o.rate for o in outcomes))


class LinkEnvironment:
    """Single-threaded environment over one pair of band traces."""

    def __init__(self, traces: TracePair, cfg: ScenarioConfig, power_dbm: Optional[float] = None,
                 rvq_codebook: Optional[RvqCodebook] = None):
        if traces.sub6.n_slots != traces.mmwave.n_slots:
            raise ConfigurationError(
                f"band traces differ in length: sub6={traces.sub6.n_slots}, mmwave={traces.mmwave.n_slots}"
            )
        mm, s6 = cfg.mmwave, cfg.sub6
        if (traces.mmwave.n_tx, traces.mmwave.n_rx, traces.mmwave.n_subcarriers) != (mm.n_bs, mm.n_ue, mm.n_subcarriers):
            raise ConfigurationError("mmWave trace dims do not match the [mmwave] section", field="mmwave")
        if (traces.sub6.n_tx, traces.sub6.n_rx, traces.sub6.n_subcarriers) != (s6.n_bs, s6.n_ue, s6.n_subcarriers):
            raise ConfigurationError("sub-6 trace dims do not match the [sub6] section", field="sub6")

        self.traces = traces
        self.cfg = cfg
        self.power_dbm = cfg.experiment.transmit_power_dbm if power_dbm is None else power_dbm
        self.power_w = 10.0 ** ((self.power_dbm - 30.0) / 10.0)
        self.noise = {MMWAVE: noise_variance_w(mm), SUB6: noise_variance_w(s6)}

        self.m_rf = mmwave.analog_overhead(mm.m_ss, mm.n_ss, mm.nu_bs, mm.nu_ue)
        self.m_bb = mmwave.digital_overhead(mm.kappa_rvq, mm.kappa_channel)
        self.m_bb_sub6 = sub6.pmi_overhead(s6.nu_pmi, s6.kappa_channel)
        self.m_dt = cfg.env.m_dt
        self.stale_horizon = cfg.env.stale_horizon_slots or 2 * self.m_rf
        self.episode_len = cfg.env.episode_len_decisions

        self.f_cb = mmwave.dft_codebook(mm.n_bs, mm.nu_bs)
        self.w_cb = mmwave.dft_codebook(mm.n_ue, mm.nu_ue)
        self.rvq = rvq_codebook or cached_rvq_codebook(
            mm.kappa_rvq, (mm.n_s, mm.n_s), mm.rvq_training, mm.rvq_seed, Config.RVQ_CACHE_DIR
        )
        self.pmi = sub6.pmi_codebook(s6.n_bs, s6.n_s, s6.nu_pmi)
        self.layout = FeatureLayout(mm.nu_bs, mm.nu_ue, mm.n_bs_rf, mm.n_ue_rf,
                                    self.rvq.size, s6.nu_pmi, self.m_rf)

        self.state: BeamState = BeamState(band=SUB6)
        self.mm_bf: Optional[mmwave.HybridBeamformers] = None
        self.sub6_bf = None  # (f_bb, w_bb)
        self.rng = np.random.default_rng(0)

    @property
    def n_slots(self) -> int:
        return self.traces.mmwave.n_slots

    @property
    def feature_size(self) -> int:
        return self.layout.size

    def reset(self, seed: int = 0):
        """Start of episode: slot 0, initial band, no beamformers, zero feedback."""
        initial = MMWAVE if self.cfg.env.initial_band == "mmwave" else SUB6
        self.state = BeamState(band=initial)
        self.mm_bf = None
        self.sub6_bf = None
        self.rng = np.random.default_rng([seed, 3])
        logger.debug(f"Environment reset seed={seed}, band={initial}, {self.n_slots} slots")
        return self.state, self.features()

    def features(self) -> np.ndarray:
        return featurize(self.state, self.layout)

    def snapshot(self) -> BeamState:
        return replace(self.state, last_trained=list(self.state.last_trained), stale=list(self.state.stale))

    @property
    def done(self) -> bool:
        return self.state.cursor >= self.n_slots or self.state.decisions >= self.episode_len

    def span_for(self, action: EnvAction) -> int:
        if action is EnvAction.ANALOG_TRAINING:
            return self.m_rf
        if action is EnvAction.DIGITAL_TRAINING:
            return self.m_bb if self.state.band == MMWAVE else self.m_bb_sub6
        if action is EnvAction.DATA_TRANSMISSION:
            return self.m_dt
        return 1

    def data_end_slot(self) -> Optional[int]:
        """Last slot of a data span started now, or None when it would overrun."""
        end = self.state.cursor + self.m_dt - 1
        return end if end < self.n_slots else None

    def _set_feedback(self, band: int, value: float) -> None:
        if band == MMWAVE:
            self.state.feedback_mmwave = value
        else:
            self.state.feedback_sub6 = value
        self.state.feedback_scale = max(self.state.feedback_scale, value)

    def mmwave_rate(self, slot: int, bf: mmwave.HybridBeamformers) -> tuple:
        trace = self.traces.mmwave
        se = mmwave.spectral_efficiency_mmwave(trace.frame(slot), bf, self.power_w,
                                               trace.large_scale_gain[slot], self.noise[MMWAVE])
        return trace.bandwidth_hz / trace.n_subcarriers * float(np.sum(se)), float(np.mean(se))

    def sub6_rate(self, slot: int, f_bb: np.ndarray, w_bb: np.ndarray) -> tuple:
        trace = self.traces.sub6
        se = sub6.spectral_efficiency_sub6(trace.frame(slot), f_bb, w_bb, self.power_w,
                                           trace.large_scale_gain[slot], self.noise[SUB6])
        return trace.bandwidth_hz / trace.n_subcarriers * float(np.sum(se)), float(np.mean(se))

    def install_mmwave(self, bf: mmwave.HybridBeamformers) -> None:
        self.mm_bf = bf
        self.state.tx_indices = list(bf.tx_indices)
        self.state.rx_indices = list(bf.rx_indices)
        self.state.rvq_indices = bf.rvq_indices

    def install_sub6(self, f_bb: np.ndarray, w_bb: np.ndarray, indices: np.ndarray) -> None:
        self.sub6_bf = (f_bb, w_bb)
        self.state.pmi_indices = np.asarray(indices)

    def force_band(self, band: int) -> None:
        """Change band without cost; used by the oracle policies."""
        self.state.band = band

    def _outcome(self, action: EnvAction, rate: float, consumed: int, end: int) -> StepOutcome:
        s = self.state
        return StepOutcome(reward=action.c_flag * rate, rate=rate, c_flag=action.c_flag,
                           slots_consumed=consumed, next_state_features=self.features(), done=self.done,
                           action=action, band=s.band, feedback=s.feedback(), end_slot=end)

    def step(self, action: EnvAction) -> StepOutcome:
        """Execute one action over its slot span."""
        action = EnvAction(action)
        s = self.state
        if action is EnvAction.ANALOG_TRAINING and s.band != MMWAVE:
            raise InvalidActionError("analog training is only available at mmWave")
        if self.done:
            return self._outcome(action, 0.0, 0, max(s.cursor - 1, 0))

        span = self.span_for(action)
        start = s.cursor
        end = start + span - 1
        s.decisions += 1
        s.mode = 1 if action is EnvAction.DATA_TRANSMISSION else 0
        if end >= self.n_slots:
            consumed = self.n_slots - start
            s.cursor = self.n_slots
            logger.debug(f"{action.value} overruns trace end at slot {start}; episode finished")
            return self._outcome(action, 0.0, consumed, self.n_slots - 1)
        s.cursor = end + 1

        rate = 0.0
        if action is EnvAction.SWITCH_BAND:
            self._switch()
        elif action is EnvAction.ANALOG_TRAINING:
            self._analog_training(end)
        elif action is EnvAction.DIGITAL_TRAINING:
            if s.band == MMWAVE:
                self._digital_training(end)
            else:
                self._pmi_training(end)
        else:
            rate = self._data(end)
        logger.debug(f"slot {start}-{end} band={s.band} {action.value} rate={rate:.3e} feedback={s.feedback():.3f}")
        return self._outcome(action, rate, span, end)

    def _switch(self) -> None:
        s = self.state
        s.band = 1 - s.band
        last = s.last_trained[s.band]
        if last is not None and not s.stale[s.band] and s.cursor - last > self.stale_horizon:
            s.stale[s.band] = True
            self._set_feedback(s.band, s.feedback(s.band) * (1.0 - self.cfg.env.stale_decay))

    def _mark_trained(self, band: int, end: int) -> None:
        self.state.last_trained[band] = end
        self.state.stale[band] = False

    def _analog_training(self, end: int) -> None:
        mm = self.cfg.mmwave
        trace = self.traces.mmwave
        snr = trace.snr(end, self.power_w, self.noise[MMWAVE])
        _, snr_eff = mmwave.mmse_estimation(mm.beta_rf, mm.zeta_rf, snr)
        sweep = mmwave.analog_sweep(trace.frame(end), self.f_cb, self.w_cb, mm.n_bs_rf, mm.n_ue_rf, snr_eff)
        self.install_mmwave(mmwave.analog_only_beamformers(sweep, mm.n_subcarriers, mm.n_s))
        self._set_feedback(MMWAVE, sweep.best_feedback)
        self._mark_trained(MMWAVE, end)

    def _digital_training(self, end: int) -> None:
        if self.mm_bf is None:
            # nothing to refine without analog beams
            return
        mm = self.cfg.mmwave
        trace = self.traces.mmwave
        frame = trace.frame(end)
        snr = trace.snr(end, self.power_w, self.noise[MMWAVE])
        hbar = mmwave.estimate_effective_channel(frame, self.mm_bf.f_rf, self.mm_bf.w_rf,
                                                 mm.beta_bb, mm.zeta_bb, mm.n_bs, snr, self.rng)
        try:
            bf = mmwave.digital_beamformers(hbar, self.mm_bf, self.rvq, mm.n_s)
        except SingularityError as e:
            logger.warning(f"Digital training at slot {end} kept previous precoder: {e}")
            return
        self.install_mmwave(bf)
        _, mean_se = self.mmwave_rate(end, bf)
        self._set_feedback(MMWAVE, mean_se)
        self._mark_trained(MMWAVE, end)

    def _pmi_training(self, end: int) -> None:
        s6 = self.cfg.sub6
        trace = self.traces.sub6
        snr = trace.snr(end, self.power_w, self.noise[SUB6])
        p_frame = sub6.csi_with_error(trace.frame(end), s6.beta, s6.zeta, s6.n_bs, snr, self.rng)
        try:
            f_bb, w_bb, indices = sub6.train(p_frame, self.pmi)
        except SingularityError as e:
            logger.warning(f"PMI training at slot {end} kept previous precoder: {e}")
            return
        self.install_sub6(f_bb, w_bb, indices)
        self._set_feedback(SUB6, sub6.se_feedback_sub6(p_frame, f_bb, w_bb, snr))
        self._mark_trained(SUB6, end)

    def _data(self, end: int) -> float:
        s = self.state
        if s.band == MMWAVE:
            if self.mm_bf is None:
                return 0.0
            rate, mean_se = self.mmwave_rate(end, self.mm_bf)
        else:
            if self.sub6_bf is None:
                return 0.0
            rate, mean_se = self.sub6_rate(end, *self.sub6_bf)
        self._set_feedback(s.band, mean_se)
        return rate


@dataclass
class EpisodeLog:
    """Outcomes of one episode plus optional threshold/feedback scatter rows."""
    outcomes: List[StepOutcome] = field(default_factory=list)
    scatter: List[tuple] = field(default_factory=list)

    def window(self, last: Optional[int] = None) -> List[StepOutcome]:
        return self.outcomes if last is None else self.outcomes[-last:]

    def mean_reward(self, last: Optional[int] = None) -> float:
        rewards = [o.reward for o in self.window(last)]
        return float(np.mean(rewards)) if rewards else 0.0

    def mean_rate(self, last: Optional[int] = None) -> float:
        """Bits delivered per second of simulated time."""
        outs = self.window(last)
        slots = sum(o.slots_consumed for o in outs)
        if slots == 0:
            return 0.0
        return float(sum(o.reward * o.slots_consumed for o in outs) / slots)

    def training_fraction(self, last: Optional[int] = None) -> float:
        outs = self.window(last)
        slots = sum(o.slots_consumed for o in outs)
        training = sum(o.slots_consumed for o in outs
                       if o.action in (EnvAction.ANALOG_TRAINING, EnvAction.DIGITAL_TRAINING))
        return training / slots if slots else 0.0

    def band_occupancy_mmwave(self, last: Optional[int] = None) -> float:
        outs = self.window(last)
        slots = sum(o.slots_consumed for o in outs)
        mm = sum(o.slots_consumed for o in outs if o.band == MMWAVE)
        return mm / slots if slots else 0.0
