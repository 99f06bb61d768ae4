"""Small batched linear-algebra helpers shared by both bands."""

import numpy as np

from app.errors import NumericalError, SingularityError

COND_LIMIT = 1e12
HERMITIAN_TOL = 1e-9


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """IID CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def hermitian(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def _check_conditioning(a: np.ndarray, what: str) -> None:
    cond = np.linalg.cond(a)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        worst = float(np.max(np.where(np.isfinite(cond), cond, np.inf)))
        raise SingularityError(f"{what}: condition number {worst:.3e} exceeds {COND_LIMIT:.0e}")


def left_pinv(a: np.ndarray) -> np.ndarray:
    """A (A^H A)^{-1} for full column rank A, batched over leading axes."""
    _check_conditioning(a, "left pseudo-inverse")
    gram = hermitian(a) @ a
    return a @ np.linalg.inv(gram)


def right_pinv(a: np.ndarray) -> np.ndarray:
    """A^H (A A^H)^{-1} for full row rank A, batched over leading axes."""
    _check_conditioning(a, "right pseudo-inverse")
    gram = a @ hermitian(a)
    return hermitian(a) @ np.linalg.inv(gram)


def spectral_norm(a: np.ndarray, iterations: int = 50, tol: float = 1e-10) -> np.ndarray:
    """Largest singular value by power iteration on A^H A.

    Works on a single matrix or a stack (..., m, n). The start vector is fixed
    and every matrix stops iterating on its own convergence, so a result does
    not depend on what else is in the batch.
    """
    a = np.asarray(a, dtype=complex)
    gram = hermitian(a) @ a
    n = gram.shape[-1]
    start = (1.0 + 0.1 * np.arange(n)) * np.exp(0.3j * np.arange(n))
    v = np.broadcast_to(start / np.linalg.norm(start), gram.shape[:-1]).copy()
    lam = np.zeros(gram.shape[:-2])
    active = np.ones(gram.shape[:-2], dtype=bool)
    for _ in range(iterations):
        w = np.einsum("...ij,...j->...i", gram, v)
        lam_new = np.linalg.norm(w, axis=-1)
        safe = np.where(lam_new > 0, lam_new, 1.0)
        done = np.abs(lam_new - lam) <= tol * np.maximum(lam_new, 1.0)
        v = np.where(active[..., None], w / safe[..., None], v)
        lam = np.where(active, lam_new, lam)
        active = active & ~done
        if not np.any(active):
            break
    return np.sqrt(lam)


def log2det_rate(gain: np.ndarray, snr) -> np.ndarray:
    """log2 det(I + snr * E E^H) for a stack of effective gain matrices E.

    Raises NumericalError when the argument is not Hermitian PSD within
    tolerance.
    """
    gain = np.asarray(gain, dtype=complex)
    snr = np.asarray(snr, dtype=float)
    arg = snr[..., None, None] * (gain @ hermitian(gain))
    scale = 1.0 + np.max(np.abs(arg)) if arg.size else 1.0
    if np.max(np.abs(arg - hermitian(arg)), initial=0.0) > HERMITIAN_TOL * scale:
        raise NumericalError("log-det argument is not Hermitian")
    eig = np.linalg.eigvalsh(arg)
    if eig.size and np.min(eig) < -HERMITIAN_TOL * scale:
        raise NumericalError(f"log-det argument has negative eigenvalue {np.min(eig):.3e}")
    return np.sum(np.log2(1.0 + np.clip(eig, 0.0, None)), axis=-1)


def normalize_columns(a: np.ndarray) -> np.ndarray:
    """Scale each column to unit 2-norm; zero columns stay zero."""
    norms = np.linalg.norm(a, axis=-2, keepdims=True)
    return a / np.where(norms > 0, norms, 1.0)
