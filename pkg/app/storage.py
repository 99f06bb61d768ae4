"""Binary containers for channel traces and network checkpoints.

Trace layout, all little-endian:

    magic      4s   b"BMTR"
    version    u16
    band       u8   0 = sub6, 1 = mmwave
    reserved   u8
    n_tx       u32
    n_rx       u32
    n_sc       u32
    n_slots    u32
    bandwidth  f64
    gain       f64 * n_slots
    los        u8  * n_slots
    h          f64 * 2 * n_slots * n_sc * n_rx * n_tx   (re, im interleaved;
                                                        slot-major, then subcarrier)

Checkpoint layout: magic b"BBCK", version u16, array count u32, then per array
a u16 name length, UTF-8 name, u8 ndim, u32 dims, f64 payload.
"""

import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Union

import numpy as np

from app.channel import BANDS, ChannelTrace
from app.errors import TraceFormatError

logger = logging.getLogger(__name__)

TRACE_MAGIC = b"BMTR"
CHECKPOINT_MAGIC = b"BBCK"
FORMAT_VERSION = 1
_TRACE_HEADER = struct.Struct("<4sHBBIIIId")
_CKPT_HEADER = struct.Struct("<4sHI")

PathLike = Union[str, Path]


def save_trace(trace: ChannelTrace, path: PathLike) -> None:
    """Write a trace, streaming one slot at a time."""
    path = Path(path)
    header = _TRACE_HEADER.pack(
        TRACE_MAGIC, FORMAT_VERSION, BANDS.index(trace.band), 0,
        trace.n_tx, trace.n_rx, trace.n_subcarriers, trace.n_slots, trace.bandwidth_hz,
    )
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(trace.large_scale_gain.astype("<f8").tobytes())
        fh.write(trace.los_flag.astype(np.uint8).tobytes())
        for m in range(trace.n_slots):
            frame = np.ascontiguousarray(trace.frame(m), dtype=np.complex128)
            fh.write(frame.view(np.float64).astype("<f8").tobytes())
    logger.info(f"Saved {trace.band} trace ({trace.n_slots} slots) to {path}")


def _read_exact(fh: BinaryIO, n: int, field: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TraceFormatError(field, f"expected {n} bytes, file ends after {len(data)}")
    return data


def load_trace(path: PathLike) -> ChannelTrace:
    """Read a trace written by save_trace.

    Raises:
        TraceFormatError: naming the offending header field, or
            "payload length" when the body does not match the header dims
    """
    path = Path(path)
    with path.open("rb") as fh:
        raw = _read_exact(fh, _TRACE_HEADER.size, "header")
        magic, version, band, _, n_tx, n_rx, n_sc, n_slots, bandwidth = _TRACE_HEADER.unpack(raw)
        if magic != TRACE_MAGIC:
            raise TraceFormatError("magic", f"expected {TRACE_MAGIC!r}, got {magic!r}")
        if version != FORMAT_VERSION:
            raise TraceFormatError("version", f"unsupported version {version}")
        if band >= len(BANDS):
            raise TraceFormatError("band", f"unknown band code {band}")
        if min(n_tx, n_rx, n_sc, n_slots) < 1:
            raise TraceFormatError("dims", f"non-positive dims {(n_tx, n_rx, n_sc, n_slots)}")
        if not np.isfinite(bandwidth) or bandwidth <= 0:
            raise TraceFormatError("bandwidth", f"invalid bandwidth {bandwidth}")
        body = fh.read()

    expected = n_slots * 8 + n_slots + n_slots * n_sc * n_rx * n_tx * 16
    if len(body) != expected:
        raise TraceFormatError("payload length", f"header implies {expected} bytes, found {len(body)}")

    gain = np.frombuffer(body, dtype="<f8", count=n_slots).astype(float)
    los = np.frombuffer(body, dtype=np.uint8, count=n_slots, offset=n_slots * 8).astype(bool)
    flat = np.frombuffer(body, dtype="<f8", offset=n_slots * 9).astype(float)
    h = flat.view(np.complex128).reshape(n_slots, n_sc, n_rx, n_tx)
    if not np.all(np.isfinite(h)) or not np.all(np.isfinite(gain)):
        raise TraceFormatError("payload", "non-finite values")
    if np.any(gain <= 0):
        raise TraceFormatError("gain", "large-scale gain must be positive")

    logger.info(f"Loaded {BANDS[band]} trace ({n_slots} slots) from {path}")
    return ChannelTrace(BANDS[band], n_tx, n_rx, n_sc, n_slots, bandwidth, gain, los, h=h)


def save_checkpoint(arrays: Dict[str, np.ndarray], path: PathLike) -> None:
    """Write named float64 arrays."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, FORMAT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=float)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())
    logger.info(f"Saved checkpoint with {len(arrays)} arrays to {path}")


def load_checkpoint(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    arrays: Dict[str, np.ndarray] = {}
    with path.open("rb") as fh:
        magic, version, count = _CKPT_HEADER.unpack(_read_exact(fh, _CKPT_HEADER.size, "header"))
        if magic != CHECKPOINT_MAGIC:
            raise TraceFormatError("magic", f"expected {CHECKPOINT_MAGIC!r}, got {magic!r}")
        if version != FORMAT_VERSION:
            raise TraceFormatError("version", f"unsupported version {version}")
        for _ in range(count):
            (n,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, n, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims"))
            size = int(np.prod(shape)) if ndim else 1
            data = _read_exact(fh, 8 * size, "payload length")
            arrays[name] = np.frombuffer(data, dtype="<f8").astype(float).reshape(shape)
        if fh.read(1):
            raise TraceFormatError("payload length", "trailing bytes after last array")
    return arrays
