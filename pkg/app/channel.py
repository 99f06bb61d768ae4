"""Geometric clustered wideband channel for both bands.

H[k, m] = sqrt(N_tx N_rx) * sum_p alpha_p(m) a_rx(aoa_p) a_tx(aod_p)^H exp(-j 2 pi tau_p f_k)

with half-wavelength ULAs at both ends, subcarrier offsets f_k centered on the
carrier, per-slot Doppler phase accumulation and a correlated blockage process
that suppresses the LOS cluster.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.special import ndtri

from app.errors import ConfigurationError, DomainError
from app.mobility import ManhattanGrid, Trajectory, generate_trajectory
from app.schemas import BandSection, ChannelSection, MmwaveSection, ScenarioConfig

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
BLOCKAGE_SPAN_KM = 0.02
SCATTERER_POOL = 32
SCATTERER_MARGIN_M = 30.0
MIN_DISTANCE_M = 1.0

BANDS = ("sub6", "mmwave")


def array_response(n_antennas: int, theta) -> np.ndarray:
    """Half-wavelength ULA steering vectors, one row per angle."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n = np.arange(n_antennas)
    return np.exp(1j * np.pi * np.outer(np.sin(theta), n)) / np.sqrt(n_antennas)


def _wrap(angle):
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


def subcarrier_offsets(n_subcarriers: int, bandwidth_hz: float) -> np.ndarray:
    """Uniform OFDM grid centered on the carrier."""
    k = np.arange(n_subcarriers)
    return (k - (n_subcarriers - 1) / 2.0) * bandwidth_hz / n_subcarriers


def large_scale_gain(distance_m: float, los: bool, carrier_hz: float,
                     exponent_los: float = 2.0, exponent_nlos: float = 3.2) -> float:
    """Log-distance path gain with a 1 m free-space intercept."""
    if distance_m <= 0:
        raise DomainError(f"distance must be positive, got {distance_m}")
    intercept = (SPEED_OF_LIGHT / (4.0 * np.pi * carrier_hz)) ** 2
    exponent = exponent_los if los else exponent_nlos
    return float(intercept * distance_m ** (-exponent))


@dataclass(frozen=True)
class PathCluster:
    complex_gain: complex
    aod: float
    aoa: float
    delay: float
    doppler: float
    is_los: bool


@dataclass
class PathTable:
    """Per-slot cluster parameters, arrays of shape (n_slots, n_clusters)."""
    gains: np.ndarray
    aod: np.ndarray
    aoa: np.ndarray
    delay: np.ndarray
    doppler: np.ndarray
    is_los: np.ndarray  # (n_clusters,)

    @classmethod
    def static(cls, clusters: List[PathCluster], n_slots: int) -> "PathTable":
        """Time-invariant table repeating the same clusters every slot."""
        def rep(values, dtype):
            return np.tile(np.asarray(values, dtype=dtype), (n_slots, 1))
        return cls(
            gains=rep([c.complex_gain for c in clusters], complex),
            aod=rep([c.aod for c in clusters], float),
            aoa=rep([c.aoa for c in clusters], float),
            delay=rep([c.delay for c in clusters], float),
            doppler=rep([c.doppler for c in clusters], float),
            is_los=np.array([c.is_los for c in clusters], dtype=bool),
        )


class ChannelTrace:
    """Per-band channel over a run of slots.

    Frames are synthesized on demand from a path table, or read from a stored
    array of shape (n_slots, n_subcarriers, n_rx, n_tx).
    """

    def __init__(self, band: str, n_tx: int, n_rx: int, n_subcarriers: int, n_slots: int,
                 bandwidth_hz: float, large_scale_gain: np.ndarray, los_flag: np.ndarray,
                 paths: Optional[PathTable] = None, h: Optional[np.ndarray] = None):
        if band not in BANDS:
            raise ConfigurationError(f"unknown band {band!r}", field="band")
        if (paths is None) == (h is None):
            raise ConfigurationError("trace needs exactly one of paths or h")
        self.band = band
        self.n_tx = int(n_tx)
        self.n_rx = int(n_rx)
        self.n_subcarriers = int(n_subcarriers)
        self.n_slots = int(n_slots)
        self.bandwidth_hz = float(bandwidth_hz)
        self.large_scale_gain = np.asarray(large_scale_gain, dtype=float)
        self.los_flag = np.asarray(los_flag, dtype=bool)
        self._paths = paths
        self._h = None if h is None else np.asarray(h, dtype=complex)
        if self._h is not None and self._h.shape != (self.n_slots, self.n_subcarriers, self.n_rx, self.n_tx):
            raise ConfigurationError(f"channel array shape {self._h.shape} does not match trace dims")
        if self.large_scale_gain.shape != (self.n_slots,) or self.los_flag.shape != (self.n_slots,):
            raise ConfigurationError("per-slot tables must have one entry per slot")
        self._f = subcarrier_offsets(self.n_subcarriers, self.bandwidth_hz)

    @property
    def paths(self) -> Optional[PathTable]:
        return self._paths

    def frame(self, m: int) -> np.ndarray:
        """Channel matrices of every subcarrier at slot m, shape (K, n_rx, n_tx)."""
        if not 0 <= m < self.n_slots:
            raise IndexError(f"slot {m} outside trace of {self.n_slots} slots")
        if self._h is not None:
            return self._h[m]
        p = self._paths
        a_rx = array_response(self.n_rx, p.aoa[m])
        a_tx = array_response(self.n_tx, p.aod[m])
        taps = p.gains[m][None, :] * np.exp(-2j * np.pi * np.outer(self._f, p.delay[m]))
        return np.sqrt(self.n_tx * self.n_rx) * np.einsum("kp,pr,pt->krt", taps, a_rx, np.conj(a_tx))

    @property
    def h(self) -> np.ndarray:
        """All frames, shape (n_slots, K, n_rx, n_tx)."""
        if self._h is not None:
            return self._h
        return np.stack([self.frame(m) for m in range(self.n_slots)])

    def clusters(self, m: int) -> List[PathCluster]:
        if self._paths is None:
            return []
        p = self._paths
        return [
            PathCluster(complex(p.gains[m, i]), float(p.aod[m, i]), float(p.aoa[m, i]),
                        float(p.delay[m, i]), float(p.doppler[m, i]), bool(p.is_los[i]))
            for i in range(p.gains.shape[1])
        ]

    def snr(self, m: int, power_w: float, noise_var_w: float) -> float:
        """Pre-beamforming SNR P G[m] / sigma^2."""
        return float(power_w * self.large_scale_gain[m] / noise_var_w)


class TracePair(NamedTuple):
    sub6: ChannelTrace
    mmwave: ChannelTrace


def band_name(band_cfg: BandSection) -> str:
    return "mmwave" if isinstance(band_cfg, MmwaveSection) else "sub6"


def noise_variance_w(band_cfg: BandSection) -> float:
    """Thermal noise power over the band: -174 dBm/Hz + 10 log10(B) + NF."""
    dbm = -174.0 + 10.0 * np.log10(band_cfg.bandwidth_hz) + band_cfg.noise_figure_db
    return float(10.0 ** ((dbm - 30.0) / 10.0))


def blockage_flags(n_slots: int, blocker_density: float, correlation: float, seed: int) -> np.ndarray:
    """Correlated Bernoulli blockage, True where the LOS cluster is blocked.

    A Gaussian AR(1) sequence is thresholded at the quantile of the blocking
    probability 1 - exp(-density * span). The sequence depends only on the
    seed, so the blocked set grows monotonically with the density.
    """
    if blocker_density < 0:
        raise ConfigurationError("blocker_density must be >= 0", field="channel.blocker_density")
    rng = np.random.default_rng([seed, 1])
    z = np.empty(n_slots)
    innovations = rng.standard_normal(n_slots)
    z[0] = innovations[0]
    scale = np.sqrt(1.0 - correlation ** 2)
    for m in range(1, n_slots):
        z[m] = correlation * z[m - 1] + scale * innovations[m]
    p_block = 1.0 - np.exp(-blocker_density * BLOCKAGE_SPAN_KM)
    if p_block <= 0.0:
        return np.zeros(n_slots, dtype=bool)
    return z < ndtri(p_block)


def _scatterers(channel_cfg: ChannelSection, seed: int) -> np.ndarray:
    grid = ManhattanGrid(channel_cfg.grid)
    rng = np.random.default_rng([seed, 0])
    lo = -SCATTERER_MARGIN_M
    xs = rng.uniform(lo, grid.width + SCATTERER_MARGIN_M, SCATTERER_POOL)
    ys = rng.uniform(lo, grid.height + SCATTERER_MARGIN_M, SCATTERER_POOL)
    return np.column_stack([xs, ys])


def generate_channel(trajectory: Trajectory, band_cfg: BandSection, blocker_density: float,
                     seed: int, channel_cfg: Optional[ChannelSection] = None) -> ChannelTrace:
    """Build one band's channel trace along a trajectory.

    Both bands generated from the same seed share scatterer geometry and the
    blockage sequence, so LOS conditions agree across bands.
    """
    channel_cfg = channel_cfg or ChannelSection()
    band = band_name(band_cfg)
    if band_cfg.n_bs < 1 or band_cfg.n_ue < 1 or band_cfg.n_subcarriers < 1:
        raise ConfigurationError(f"{band}: antenna and subcarrier counts must be positive")

    n_slots = trajectory.n_slots
    n_clusters = band_cfg.cluster_count
    wavelength = SPEED_OF_LIGHT / band_cfg.carrier_hz
    bs = np.asarray(channel_cfg.bs_position, dtype=float)

    blocked = blockage_flags(n_slots, blocker_density, channel_cfg.blockage_correlation, seed)
    los_allowed = channel_cfg.scenario == "umi_los"
    los_flag = np.logical_and(los_allowed, ~blocked)

    ue = trajectory.positions
    heading_angle = np.arctan2(trajectory.headings[:, 1], trajectory.headings[:, 0])
    to_ue = ue - bs
    d_los = np.maximum(np.linalg.norm(to_ue, axis=1), MIN_DISTANCE_M)

    aod = np.empty((n_slots, n_clusters))
    aoa = np.empty((n_slots, n_clusters))
    delay = np.empty((n_slots, n_clusters))
    aod[:, 0] = np.arctan2(to_ue[:, 1], to_ue[:, 0])
    aoa[:, 0] = _wrap(np.arctan2(-to_ue[:, 1], -to_ue[:, 0]) - heading_angle)
    delay[:, 0] = d_los / SPEED_OF_LIGHT

    scat = _scatterers(channel_cfg, seed)[: n_clusters - 1]
    for i, s in enumerate(scat, start=1):
        bs_to_s = s - bs
        ue_to_s = s - ue
        aod[:, i] = np.arctan2(bs_to_s[1], bs_to_s[0])
        aoa[:, i] = _wrap(np.arctan2(ue_to_s[:, 1], ue_to_s[:, 0]) - heading_angle)
        delay[:, i] = (np.linalg.norm(bs_to_s) + np.linalg.norm(ue_to_s, axis=1)) / SPEED_OF_LIGHT
    aod = _wrap(aod)
    doppler = trajectory.speed / wavelength * np.cos(aoa)

    # cluster powers: Rician split, NLOS share decaying with excess delay
    k_lin = 10.0 ** (band_cfg.k_factor_db / 10.0)
    power = np.zeros((n_slots, n_clusters))
    if n_clusters > 1:
        excess = delay[:, 1:] - delay[:, :1]
        weights = np.exp(-excess / band_cfg.delay_spread_s)
        weights /= weights.sum(axis=1, keepdims=True)
        nlos_share = np.where(los_flag, 1.0 / (k_lin + 1.0), 1.0)
        power[:, 1:] = weights * nlos_share[:, None]
        power[:, 0] = np.where(los_flag, k_lin / (k_lin + 1.0), 0.0)
    else:
        power[:, 0] = np.where(los_flag, 1.0, 0.0)

    band_index = BANDS.index(band)
    rng = np.random.default_rng([seed, 2, band_index])
    phase0 = rng.uniform(-np.pi, np.pi, n_clusters)
    advance = 2.0 * np.pi * doppler * trajectory.slot_duration_s
    phase = phase0[None, :] + np.vstack([np.zeros((1, n_clusters)), np.cumsum(advance[:-1], axis=0)])
    gains = np.sqrt(power) * np.exp(1j * phase)

    is_los = np.zeros(n_clusters, dtype=bool)
    is_los[0] = True
    paths = PathTable(gains=gains, aod=aod, aoa=aoa, delay=delay, doppler=doppler, is_los=is_los)
    g = np.array([
        large_scale_gain(d_los[m], bool(los_flag[m]), band_cfg.carrier_hz,
                         channel_cfg.path_loss_exp_los, channel_cfg.path_loss_exp_nlos)
        for m in range(n_slots)
    ])
    logger.debug(
        f"{band} channel seed={seed}: {n_slots} slots, {n_clusters} clusters, "
        f"LOS fraction {los_flag.mean():.3f}"
    )
    return ChannelTrace(band, band_cfg.n_bs, band_cfg.n_ue, band_cfg.n_subcarriers, n_slots,
                        band_cfg.bandwidth_hz, g, los_flag, paths=paths)


def trace_slots(cfg: ScenarioConfig) -> int:
    """Slot budget of one episode."""
    return cfg.env.episode_len_decisions * cfg.env.m_dt


def generate_traces(cfg: ScenarioConfig, seed: int, n_slots: Optional[int] = None) -> TracePair:
    """Trajectory plus both band traces for one episode."""
    n_slots = n_slots or trace_slots(cfg)
    ch = cfg.channel
    trajectory = generate_trajectory(ch.grid, ch.speed_mps, n_slots, seed, ch.slot_duration_s)
    sub6 = generate_channel(trajectory, cfg.sub6, ch.blocker_density, seed, ch)
    mmwave = generate_channel(trajectory, cfg.mmwave, ch.blocker_density, seed, ch)
    logger.debug(f"Generated traces seed={seed}: {n_slots} slots, LOS fraction {mmwave.los_flag.mean():.3f}")
    return TracePair(sub6=sub6, mmwave=mmwave)

