"""RVQ codebooks for effective-channel feedback, refined with Lloyd iterations."""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from app import linalg
from app.errors import ConfigurationError

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 100
REL_TOL = 1e-6
_CHUNK = 512

_cache: Dict[Tuple, "RvqCodebook"] = {}


@dataclass(frozen=True)
class RvqCodebook:
    entries: np.ndarray  # (2**bits, rows, cols), unit Frobenius norm
    bits: int
    distortion_history: Tuple[float, ...] = ()

    @property
    def size(self) -> int:
        return int(self.entries.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.entries.shape[1:])


def _normalize(mats: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mats, axis=(-2, -1), keepdims=True)
    return mats / np.where(norms > 0, norms, 1.0)


def similarity(hbar: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """||Hbar^H C_i||_2 for every entry; hbar may carry leading batch axes.

    Returns shape (..., n_entries).
    """
    prod = linalg.hermitian(hbar)[..., None, :, :] @ entries
    return linalg.spectral_norm(prod)


def _chunked_similarity(samples: np.ndarray, entries: np.ndarray) -> np.ndarray:
    out = np.empty((samples.shape[0], entries.shape[0]))
    for start in range(0, samples.shape[0], _CHUNK):
        out[start:start + _CHUNK] = similarity(samples[start:start + _CHUNK], entries)
    return out


def _farthest_point_init(samples: np.ndarray, size: int) -> np.ndarray:
    chosen = [0]
    best = similarity(samples, samples[:1])[:, 0]
    while len(chosen) < size:
        nxt = int(np.argmin(best))
        chosen.append(nxt)
        best = np.maximum(best, similarity(samples, samples[nxt:nxt + 1])[:, 0])
    return samples[chosen].copy()


def _centroid(members: np.ndarray, current: np.ndarray) -> np.ndarray:
    # align the arbitrary common phase of each member to the current centroid
    inner = np.einsum("nij,ij->n", np.conj(members), current)
    phase = np.exp(1j * np.angle(inner))
    return _normalize(np.mean(members * phase[:, None, None], axis=0))


def build_rvq_codebook(bits: int, shape: Tuple[int, int], n_training: int = 4096, seed: int = 0,
                       max_iterations: int = MAX_ITERATIONS, training: Optional[np.ndarray] = None) -> RvqCodebook:
    """Lloyd-refined codebook of 2**bits unit-Frobenius matrices.

    Args:
        bits: Codebook bits
        shape: Matrix shape of each entry
        n_training: Number of random normalized training matrices
        seed: Training-set and initialization seed
        max_iterations: Lloyd iteration cap
        training: Optional explicit training set, used instead of random draws

    Returns:
        RvqCodebook whose distortion_history is non-increasing
    """
    if bits < 1:
        raise ConfigurationError("RVQ codebook needs at least one bit", field="mmwave.kappa_rvq")
    size = 2 ** bits
    rng = np.random.default_rng(seed)
    if training is None:
        samples = _normalize(linalg.complex_gaussian(rng, (n_training,) + tuple(shape)))
    else:
        samples = _normalize(np.asarray(training, dtype=complex))
    if samples.shape[0] < size:
        raise ConfigurationError(f"training set of {samples.shape[0]} cannot seed {size} entries")
    samples = samples[rng.permutation(samples.shape[0])]

    entries = _farthest_point_init(samples, size)
    history: List[float] = []
    for iteration in range(max_iterations):
        sim = _chunked_similarity(samples, entries)
        assign = np.argmax(sim, axis=1)
        best = sim[np.arange(len(samples)), assign]
        distortion = float(np.mean(1.0 - best ** 2))
        history.append(distortion)
        if len(history) > 1 and history[-2] - distortion <= REL_TOL * max(history[-2], 1e-300):
            break

        for i in range(size):
            members = samples[assign == i]
            if members.shape[0] == 0:
                far = int(np.argmin(best))
                entries[i] = samples[far]
                best[far] = 1.0
                continue
            candidate = _centroid(members, entries[i])
            old = similarity(members, entries[i:i + 1])[:, 0]
            new = similarity(members, candidate[None])[:, 0]
            # keep the old centroid unless the cluster distortion improves
            if np.mean(new ** 2) >= np.mean(old ** 2):
                entries[i] = candidate

    logger.info(f"RVQ codebook bits={bits} shape={tuple(shape)}: {len(history)} Lloyd iterations, "
                f"distortion {history[-1]:.4f}")
    return RvqCodebook(entries=entries, bits=bits, distortion_history=tuple(history))


def cached_rvq_codebook(bits: int, shape: Tuple[int, int], n_training: int, seed: int,
                        cache_dir: str = "") -> RvqCodebook:
    """Process-wide cache, optionally backed by .npy files under cache_dir."""
    key = (bits, tuple(shape), n_training, seed)
    if key in _cache:
        return _cache[key]
    path = None
    if cache_dir:
        path = Path(cache_dir) / f"rvq_b{bits}_{shape[0]}x{shape[1]}_n{n_training}_s{seed}.npy"
        if path.exists():
            entries = np.load(path)
            _cache[key] = RvqCodebook(entries=entries, bits=bits)
            logger.debug(f"RVQ codebook loaded from {path}")
            return _cache[key]
    codebook = build_rvq_codebook(bits, shape, n_training, seed)
    if path is not None:
        os.makedirs(path.parent, exist_ok=True)
        np.save(path, codebook.entries)
    _cache[key] = codebook
    return codebook


def quantize_effective_channel(hbar: np.ndarray, cb: RvqCodebook) -> Tuple[np.ndarray, int]:
    """Entry maximizing ||Hbar^H C||_2; ties resolve to the lowest index."""
    if hbar.shape != cb.shape:
        raise ConfigurationError(f"effective channel shape {hbar.shape} does not match codebook {cb.shape}")
    index = int(np.argmax(similarity(hbar, cb.entries)))
    return cb.entries[index], index


def quantize_frame(hbar: np.ndarray, cb: RvqCodebook) -> Tuple[np.ndarray, np.ndarray]:
    """quantize_effective_channel for every subcarrier of a (K, rows, cols) stack."""
    if hbar.shape[1:] != cb.shape:
        raise ConfigurationError(f"effective channel shape {hbar.shape[1:]} does not match codebook {cb.shape}")
    indices = np.argmax(similarity(hbar, cb.entries), axis=-1)
    return cb.entries[indices], indices
