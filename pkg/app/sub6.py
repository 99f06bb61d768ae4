"""Sub-6 GHz fully digital beam management with PMI feedback."""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app import linalg
from app.errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

OVERSAMPLING = 4


@dataclass(frozen=True)
class PmiCodebook:
    precoders: np.ndarray  # (size, n_bs, n_s), each with ||F||_F^2 = n_s
    columns: Tuple[Tuple[int, ...], ...]  # oversampled DFT columns behind each entry

    @property
    def size(self) -> int:
        return int(self.precoders.shape[0])


def _column_sets(n_beams: int, n_s: int):
    """Orthogonal groups {l, l+O, l+2O, ...} first, then remaining n_s-subsets in lexicographic order."""
    seen = set()
    for l in range(n_beams):
        cols = tuple((l + t * OVERSAMPLING) % n_beams for t in range(n_s))
        key = frozenset(cols)
        if len(key) == n_s and key not in seen:
            seen.add(key)
            yield cols
    for cols in itertools.combinations(range(n_beams), n_s):
        key = frozenset(cols)
        if key not in seen:
            seen.add(key)
            yield cols


def pmi_codebook(n_bs: int, n_s: int, size: int) -> PmiCodebook:
    """Simplified Type-1 codebook of DFT column subsets.

    Each entry takes n_s distinct columns of an OVERSAMPLING-times oversampled
    DFT beam set over n_bs antennas.
    """
    if size < 1:
        raise ConfigurationError("PMI codebook size must be >= 1", field="sub6.nu_pmi")
    if n_s > n_bs:
        raise ConfigurationError(f"n_s={n_s} exceeds n_bs={n_bs}", field="sub6.n_s")
    n_beams = OVERSAMPLING * n_bs
    enumerable = math.comb(n_beams, n_s)
    if size > enumerable:
        raise ConfigurationError(
            f"nu_pmi={size} exceeds the {enumerable} enumerable column subsets", field="sub6.nu_pmi"
        )
    u = -1.0 + 2.0 * np.arange(n_beams) / n_beams
    beams = np.exp(1j * np.pi * np.outer(np.arange(n_bs), u)) / np.sqrt(n_bs)  # (n_bs, n_beams)
    columns = list(itertools.islice(_column_sets(n_beams, n_s), size))
    precoders = np.stack([beams[:, list(cols)] for cols in columns])
    power = np.linalg.norm(precoders, axis=(-2, -1))
    precoders = precoders * (math.sqrt(n_s) / power)[:, None, None]
    return PmiCodebook(precoders=precoders, columns=tuple(columns))


def csi_with_error(h_frame: np.ndarray, beta: float, zeta: float, n_bs: int, snr: float,
                   rng: np.random.Generator) -> np.ndarray:
    """H[k] plus CSI error of variance N_BS / (beta zeta snr)."""
    denom = beta * zeta * snr
    if denom <= 0:
        raise DomainError("beta * zeta * snr must be positive")
    if math.isinf(denom):
        return np.array(h_frame, dtype=complex)
    return h_frame + math.sqrt(n_bs / denom) * linalg.complex_gaussian(rng, h_frame.shape)


def pmi_metric(p_frame: np.ndarray, cb: PmiCodebook) -> np.ndarray:
    """||P[k] F_i||_F for every subcarrier and entry, shape (K, size)."""
    return np.linalg.norm(np.einsum("krt,its->kirs", p_frame, cb.precoders), axis=(-2, -1))


def pmi_select(p_frame: np.ndarray, cb: PmiCodebook) -> Tuple[np.ndarray, np.ndarray]:
    """Per-subcarrier precoder maximizing ||P F||_F; ties go to the lowest index."""
    indices = np.argmax(pmi_metric(p_frame, cb), axis=1)
    return cb.precoders[indices], indices


def zf_combiner(h_eff: np.ndarray) -> np.ndarray:
    """W = H (H^H H)^{-1} on the post-precoding effective channel."""
    return linalg.left_pinv(h_eff)


def stream_gains(p_frame: np.ndarray, f_bb: np.ndarray, w_bb: np.ndarray) -> np.ndarray:
    """Sum over streams of |(W^H P F)_ss|^2, per subcarrier."""
    eff = linalg.hermitian(w_bb) @ p_frame @ f_bb
    return np.sum(np.abs(np.diagonal(eff, axis1=-2, axis2=-1)) ** 2, axis=-1)


def se_feedback_sub6(p_frame: np.ndarray, f_bb: np.ndarray, w_bb: np.ndarray, snr: float) -> float:
    """PMI-report spectral efficiency, mean over subcarriers of log2(1 + snr q_k)."""
    return float(np.mean(np.log2(1.0 + snr * stream_gains(p_frame, f_bb, w_bb))))


def pmi_overhead(nu_pmi: int, kappa_channel: int) -> int:
    """M_BB (sub-6) = ceil(log2(nu_PMI) / kappa_channel)."""
    return math.ceil(math.log2(nu_pmi) / kappa_channel)


def train(p_frame: np.ndarray, cb: PmiCodebook) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """PMI selection followed by ZF combining on the reported CSI.

    Returns:
        (f_bb, w_bb, indices) with unit-norm combiner columns
    """
    f_bb, indices = pmi_select(p_frame, cb)
    w_bb = linalg.normalize_columns(zf_combiner(p_frame @ f_bb))
    return f_bb, w_bb, indices


def spectral_efficiency_sub6(h_frame: np.ndarray, f_bb: np.ndarray, w_bb: np.ndarray, p: float, g: float,
                             noise_var: float) -> np.ndarray:
    """Per-subcarrier log2 det(I + (P G / sigma^2) W^H H F F^H H^H W)."""
    gain = linalg.hermitian(w_bb) @ h_frame @ f_bb
    return linalg.log2det_rate(gain, p * g / noise_var)


def best_rate_per_subcarrier(h_frame: np.ndarray, cb: PmiCodebook, snr: float) -> Tuple[np.ndarray, List[int]]:
    """Rate-maximizing entry per subcarrier with ZF on the true channel."""
    rates = np.empty((h_frame.shape[0], cb.size))
    for i in range(cb.size):
        f = np.broadcast_to(cb.precoders[i], (h_frame.shape[0],) + cb.precoders[i].shape)
        try:
            w = linalg.normalize_columns(zf_combiner(h_frame @ f))
        except ArithmeticError:
            rates[:, i] = -np.inf
            continue
        rates[:, i] = linalg.log2det_rate(linalg.hermitian(w) @ h_frame @ f, snr)
    best = np.argmax(rates, axis=1)
    chosen = rates[np.arange(h_frame.shape[0]), best]
    return np.where(np.isfinite(chosen), chosen, 0.0), [int(b) for b in best]
