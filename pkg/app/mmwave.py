"""mmWave hybrid beam management.

Analog training sweeps DFT beam pairs and assigns them greedily to RF chains.
Digital training estimates the effective channel seen through the analog
beams, quantizes it with an RVQ codebook and derives the baseband precoder
and combiner from it.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from app import linalg
from app.errors import ConfigurationError, DomainError
from app.rvq import RvqCodebook, quantize_frame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalogCodebook:
    vectors: np.ndarray  # (size, n_antennas)

    @property
    def size(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def n_antennas(self) -> int:
        return int(self.vectors.shape[1])

    def matrix(self) -> np.ndarray:
        """Codebook as columns, shape (n_antennas, size)."""
        return self.vectors.T


@dataclass
class HybridBeamformers:
    f_rf: np.ndarray  # (n_bs, n_bs_rf)
    w_rf: np.ndarray  # (n_ue, n_ue_rf)
    f_bb: np.ndarray  # (K, n_bs_rf, n_s)
    w_bb: np.ndarray  # (K, n_ue_rf, n_s)
    tx_indices: List[int] = field(default_factory=list)
    rx_indices: List[int] = field(default_factory=list)
    rvq_indices: Optional[np.ndarray] = None

    def precoder(self) -> np.ndarray:
        return self.f_rf[None] @ self.f_bb

    def combiner(self) -> np.ndarray:
        """W_RF W_BB[k] with unit-norm columns, the receive filter used for rates."""
        return linalg.normalize_columns(self.w_rf[None] @ self.w_bb)


@dataclass
class AnalogSweepResult:
    f_rf: np.ndarray
    w_rf: np.ndarray
    best_feedback: float
    tx_indices: List[int]
    rx_indices: List[int]
    pair_feedback: List[float]


def dft_codebook(n_antennas: int, size: Optional[int] = None) -> AnalogCodebook:
    """Steering vectors at spatial frequencies u_i = -1 + 2 i / size."""
    size = n_antennas if size is None else size
    if size < 1 or n_antennas < 1:
        raise ConfigurationError("codebook size and antenna count must be >= 1")
    u = -1.0 + 2.0 * np.arange(size) / size
    n = np.arange(n_antennas)
    vectors = np.exp(1j * np.pi * np.outer(u, n)) / np.sqrt(n_antennas)
    return AnalogCodebook(vectors=vectors)


def mmse_estimation(beta: float, zeta: float, snr: float):
    """Pilot-based estimation MSE and the resulting effective SNR.

    Returns:
        (mmse, snr_eff) with mmse = 1 / (1 + beta zeta snr) and
        snr_eff = snr (1 - mmse) / (1 + snr mmse)
    """
    if beta < 0 or zeta < 0 or snr < 0:
        raise DomainError(f"estimation inputs must be non-negative, got beta={beta}, zeta={zeta}, snr={snr}")
    if math.isinf(beta * zeta):
        return 0.0, float(snr)
    mmse = 1.0 / (1.0 + beta * zeta * snr)
    snr_eff = snr * (1.0 - mmse) / (1.0 + snr * mmse)
    return mmse, snr_eff


def se_feedback(h_frame: np.ndarray, g: np.ndarray, v: np.ndarray, snr_eff: float) -> float:
    """Single-beam-pair spectral efficiency reported by the user, bps/Hz."""
    gains = np.abs(np.einsum("r,krt,t->k", np.conj(g), h_frame, v)) ** 2
    return float(np.mean(np.log2(1.0 + snr_eff * gains)))


def pair_feedback_table(h_frame: np.ndarray, f_cb: AnalogCodebook, w_cb: AnalogCodebook,
                        snr_eff: float) -> np.ndarray:
    """se_feedback for every (v, g) pair, shape (nu_bs, nu_ue)."""
    proj = np.einsum("gr,krt,vt->kvg", np.conj(w_cb.vectors), h_frame, f_cb.vectors)
    return np.mean(np.log2(1.0 + snr_eff * np.abs(proj) ** 2), axis=0)


def analog_sweep(h_frame: np.ndarray, f_cb: AnalogCodebook, w_cb: AnalogCodebook,
                 n_bs_rf: int, n_ue_rf: int, snr_eff: float) -> AnalogSweepResult:
    """Exhaustive pair sweep with greedy per-RF-chain assignment.

    Each round picks the best remaining pair whose beams were not used in an
    earlier round; ties go to the lowest (v, g) index. When one side has more
    RF chains, its extra chains take the unused beams with the best
    pair feedback.
    """
    if f_cb.size < n_bs_rf or w_cb.size < n_ue_rf:
        raise ConfigurationError(
            f"codebooks ({f_cb.size}, {w_cb.size}) smaller than RF chains ({n_bs_rf}, {n_ue_rf})"
        )
    table = pair_feedback_table(h_frame, f_cb, w_cb, snr_eff)
    free = np.ones_like(table, dtype=bool)
    tx: List[int] = []
    rx: List[int] = []
    values: List[float] = []
    for _ in range(min(n_bs_rf, n_ue_rf)):
        masked = np.where(free, table, -np.inf)
        v, g = np.unravel_index(int(np.argmax(masked)), table.shape)
        tx.append(int(v))
        rx.append(int(g))
        values.append(float(table[v, g]))
        free[v, :] = False
        free[:, g] = False
    while len(tx) < n_bs_rf:
        best = np.max(table, axis=1)
        best[tx] = -np.inf
        tx.append(int(np.argmax(best)))
    while len(rx) < n_ue_rf:
        best = np.max(table, axis=0)
        best[rx] = -np.inf
        rx.append(int(np.argmax(best)))

    f_rf = f_cb.vectors[tx].T
    w_rf = w_cb.vectors[rx].T
    logger.debug(f"Analog sweep picked tx={tx} rx={rx} feedback={values[0]:.3f}")
    return AnalogSweepResult(f_rf=f_rf, w_rf=w_rf, best_feedback=values[0],
                             tx_indices=tx, rx_indices=rx, pair_feedback=values)


def analog_overhead(m_ss: int, n_ss: int, nu_bs: int, nu_ue: int) -> int:
    """M_RF = M_SS * ceil(nu_BS nu_UE / N_SS)."""
    return m_ss * -(-(nu_bs * nu_ue) // n_ss)


def digital_overhead(kappa_rvq: int, kappa_channel: int) -> int:
    """M_BB = ceil(kappa_RVQ / kappa_channel)."""
    return -(-kappa_rvq // kappa_channel)


def estimate_effective_channel(h_frame: np.ndarray, f_rf: np.ndarray, w_rf: np.ndarray,
                               beta_bb: float, zeta_bb: float, n_bs: int, snr: float,
                               rng: np.random.Generator) -> np.ndarray:
    """W_RF^H H[k] F_RF plus estimation noise of variance N_BS / (beta zeta snr)."""
    denom = beta_bb * zeta_bb * snr
    if denom <= 0:
        raise DomainError("beta_bb * zeta_bb * snr must be positive")
    effective = np.conj(w_rf.T)[None] @ h_frame @ f_rf[None]
    if math.isinf(denom):
        return effective
    return effective + math.sqrt(n_bs / denom) * linalg.complex_gaussian(rng, effective.shape)


def ls_combiner(hbar_eff: np.ndarray) -> np.ndarray:
    """W_BB = H (H^H H)^{-1}; batched over leading axes."""
    return linalg.left_pinv(hbar_eff)


def mmse_precoder(hhat: np.ndarray) -> np.ndarray:
    """F_BB = H^H (H H^H)^{-1} before power normalization."""
    return linalg.right_pinv(hhat)


def normalize_precoder(f_rf: np.ndarray, f_bb: np.ndarray, n_s: int) -> np.ndarray:
    """Scale each subcarrier so that ||F_RF F_BB[k]||_F^2 = N_S."""
    power = np.linalg.norm(f_rf[None] @ f_bb, axis=(-2, -1))
    return f_bb * (math.sqrt(n_s) / np.where(power > 0, power, 1.0))[:, None, None]


def beam_pair_beamformers(f_rf: np.ndarray, w_rf: np.ndarray, tx: List[int], rx: List[int],
                          n_subcarriers: int, n_s: int) -> HybridBeamformers:
    """Fixed analog beams with streams mapped one-to-one onto the first N_S chains."""
    n_bs_rf = f_rf.shape[1]
    n_ue_rf = w_rf.shape[1]
    f_bb = np.zeros((n_subcarriers, n_bs_rf, n_s), dtype=complex)
    w_bb = np.zeros((n_subcarriers, n_ue_rf, n_s), dtype=complex)
    f_bb[:, :n_s, :] = np.eye(n_s)
    w_bb[:, :n_s, :] = np.eye(n_s)
    return HybridBeamformers(f_rf, w_rf, normalize_precoder(f_rf, f_bb, n_s), w_bb, list(tx), list(rx))


def analog_only_beamformers(sweep: AnalogSweepResult, n_subcarriers: int, n_s: int) -> HybridBeamformers:
    """Streams mapped one-to-one onto the first N_S swept pairs."""
    return beam_pair_beamformers(sweep.f_rf, sweep.w_rf, sweep.tx_indices, sweep.rx_indices, n_subcarriers, n_s)


def beam_assignments(f_cb: AnalogCodebook, w_cb: AnalogCodebook, n_bs_rf: int,
                     n_ue_rf: int) -> Iterator[Tuple[List[int], List[int]]]:
    """Every ordered choice of distinct beams per RF chain on both sides."""
    for tx in itertools.permutations(range(f_cb.size), n_bs_rf):
        for rx in itertools.permutations(range(w_cb.size), n_ue_rf):
            yield list(tx), list(rx)


def assignment_count(f_cb: AnalogCodebook, w_cb: AnalogCodebook, n_bs_rf: int, n_ue_rf: int) -> int:
    return math.perm(f_cb.size, n_bs_rf) * math.perm(w_cb.size, n_ue_rf)


def digital_beamformers(hbar: np.ndarray, analog: HybridBeamformers, codebook: Optional[RvqCodebook],
                        n_s: int) -> HybridBeamformers:
    """Baseband precoder and combiner from an estimated effective channel.

    The effective channel is reduced to the N_S strongest swept pairs, which
    sit first because the sweep assigns chains in decreasing feedback order.
    The combiner is the LS solution on the estimate; the precoder inverts the
    RVQ-quantized estimate, or the estimate itself when codebook is None.
    """
    reduced = hbar[:, :n_s, :n_s]
    w_small = ls_combiner(reduced)
    if codebook is None:
        hhat, indices = reduced, None
    else:
        hhat, indices = quantize_frame(reduced, codebook)
    f_small = mmse_precoder(hhat)

    k = hbar.shape[0]
    f_bb = np.zeros((k, analog.f_rf.shape[1], n_s), dtype=complex)
    w_bb = np.zeros((k, analog.w_rf.shape[1], n_s), dtype=complex)
    f_bb[:, :n_s, :] = f_small
    w_bb[:, :n_s, :] = w_small
    return HybridBeamformers(analog.f_rf, analog.w_rf, normalize_precoder(analog.f_rf, f_bb, n_s), w_bb,
                             list(analog.tx_indices), list(analog.rx_indices), indices)


def spectral_efficiency_mmwave(h_frame: np.ndarray, bf: HybridBeamformers, p: float, g: float,
                               noise_var: float) -> np.ndarray:
    """Per-subcarrier log2 det(I + (P G / sigma^2) W^H H F F^H H^H W)."""
    gain = linalg.hermitian(bf.combiner()) @ h_frame @ bf.precoder()
    return linalg.log2det_rate(gain, p * g / noise_var)
