"""Bit-exact binary tensor container and PGM frame export.

File layout (all multi-byte fields little-endian):

    offset  size        field
    0       4           magic "LVT1"
    4       1           version, currently 1
    5       1           dtype code, 0 = 32-bit float
    6       1           ndim
    7       4 * ndim    dims, u32 each
    ...     4 * prod    payload, row-major float32

Payloads are written and read as float32 regardless of in-memory dtype;
a float32 round trip is bitwise. Non-finite values are rejected at write
time so every file on disk is loadable into a latent.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"LVT1"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBB")
MAX_DIMS = 8


def write_tensor(path: str | Path, tensor: np.ndarray) -> None:
    """Serialize a tensor as a little-endian float32 container."""
    arr = np.ascontiguousarray(tensor, dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > MAX_DIMS:
        raise ValueError(f"tensor must have 1..{MAX_DIMS} dims, got {arr.ndim}")
    if min(arr.shape) < 1:
        raise ValueError(f"tensor dims must be nonzero, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite tensor values")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Load a tensor container, verifying magic, version, dtype, and length."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, dtype, ndim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if not 1 <= ndim <= MAX_DIMS:
        raise FormatError(f"{path}: implausible ndim {ndim}")
    dims_end = _HEADER.size + 4 * ndim
    if len(blob) < dims_end:
        raise FormatError(f"{path}: truncated dim table")
    dims = struct.unpack_from(f"<{ndim}I", blob, _HEADER.size)
    if min(dims) < 1:
        raise FormatError(f"{path}: zero-sized dim in {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    expected = dims_end + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload length {len(blob) - dims_end} does not match "
            f"dims {dims} ({4 * count} bytes expected)"
        )
    payload = np.frombuffer(blob, dtype="<f4", offset=dims_end, count=count)
    return payload.reshape(dims).copy()


def export_frames(z, out_dir: str | Path) -> list[Path]:
    """Write one binary PGM (P5, maxval 255) per frame of a c=1 latent.

    Values are clamped to [0, 1] and quantized round-half-up, so 0.5
    maps to byte 128.
    """
    from .latent import LatentVideo

    if isinstance(z, LatentVideo):
        if z.channels != 1:
            raise ValueError(f"PGM export supports c = 1, got c = {z.channels}")
        frames = z.data[0]
    else:
        frames = np.asarray(z, dtype=np.float64)
        if frames.ndim != 3:
            raise ValueError(f"expected (F, h, w) frames, got {frames.shape}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = frames.shape[1:]
    written = []
    for i, frame in enumerate(frames):
        clamped = np.clip(frame, 0.0, 1.0)
        bytes_ = np.floor(clamped * 255.0 + 0.5).astype(np.uint8)
        path = out / f"frame_{i:04d}.pgm"
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(bytes_.tobytes())
        written.append(path)
    return written
