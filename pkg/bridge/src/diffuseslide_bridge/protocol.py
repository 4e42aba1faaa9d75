"""Wire protocol implementation for the denoiser bridge.

Independent implementation of the byte layout documented in the engine's
docs/protocol.md: u32 little-endian length framing, u8 message type,
little-endian bodies, tensors as (u8 ndim, u32 dims, f32 data).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024
MAX_TENSOR_DIMS = 8

HELLO_REQ = 0x01
DENOISE_REQ = 0x02
ERROR = 0x7F
HELLO_RESP = 0x81
DENOISE_RESP = 0x82
STEP_META = 0x83

CODE_BAD_VERSION = 1
CODE_MALFORMED = 2
CODE_BACKEND = 3
CODE_TOO_LONG = 4


class WireError(Exception):
    """Raised for any violation of framing or message grammar."""


class PeerClosed(Exception):
    """The peer shut the connection down cleanly between frames."""


@dataclass
class HelloRequest:
    version: int


@dataclass
class DenoiseRequest:
    request_id: int
    sigma_from: float
    sigma_to: float
    window_start: int
    cond_offset: int
    cond: np.ndarray
    window: np.ndarray


class _Cursor:
    """Sequential reader over one payload with hard bounds checks."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise WireError("message body truncated")
        values = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return values

    def take_tensor(self) -> np.ndarray:
        (ndim,) = self.take("<B")
        if not 1 <= ndim <= MAX_TENSOR_DIMS:
            raise WireError(f"tensor ndim {ndim} outside 1..{MAX_TENSOR_DIMS}")
        dims = self.take(f"<{ndim}I")
        if min(dims) < 1:
            raise WireError(f"tensor with empty dim: {dims}")
        count = 1
        for dim in dims:
            count *= dim
        if 4 * count > MAX_FRAME_BYTES:
            raise WireError("tensor larger than frame limit")
        if self.pos + 4 * count > len(self.buf):
            raise WireError("tensor data truncated")
        arr = np.frombuffer(self.buf, dtype="<f4", count=count, offset=self.pos)
        self.pos += 4 * count
        return arr.reshape(dims).copy()

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise WireError(
                f"{len(self.buf) - self.pos} trailing bytes after message body"
            )


def parse_request(payload: bytes) -> HelloRequest | DenoiseRequest:
    """Parse one client-to-server payload."""
    if not payload:
        raise WireError("empty payload")
    cur = _Cursor(payload)
    (msg_type,) = cur.take("<B")
    if msg_type == HELLO_REQ:
        (version,) = cur.take("<H")
        cur.finish()
        return HelloRequest(version=version)
    if msg_type == DENOISE_REQ:
        rid, s_from, s_to, wstart, coff = cur.take("<QddIH")
        cond = cur.take_tensor()
        window = cur.take_tensor()
        cur.finish()
        if not (np.isfinite(s_from) and np.isfinite(s_to)):
            raise WireError("non-finite sigma")
        return DenoiseRequest(
            request_id=rid, sigma_from=s_from, sigma_to=s_to,
            window_start=wstart, cond_offset=coff, cond=cond, window=window,
        )
    raise WireError(f"unsupported request type 0x{msg_type:02x}")


def pack_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape) + arr.tobytes()


def pack_hello_resp(capability: int, c: int, h: int, w: int) -> bytes:
    return struct.pack("<BHHHHH", HELLO_RESP, PROTOCOL_VERSION, capability, c, h, w)


def pack_denoise_resp(request_id: int, result: np.ndarray) -> bytes:
    return struct.pack("<BQB", DENOISE_RESP, request_id, 0) + pack_tensor(result)


def pack_step_meta(request_id: int, matched_sigma: float) -> bytes:
    return struct.pack("<BQd", STEP_META, request_id, matched_sigma)


def pack_error(request_id: int, code: int, message: str) -> bytes:
    msg = message.encode("utf-8")[:65535]
    return struct.pack("<BQHH", ERROR, request_id, code, len(msg)) + msg


def send_frame(sock, payload: bytes) -> None:
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def recv_frame(sock) -> bytes:
    header = _recv_exact(sock, 4, allow_eof=True)
    (length,) = struct.unpack("<I", header)
    if length > MAX_FRAME_BYTES:
        raise WireError(f"frame of {length} bytes exceeds limit")
    return _recv_exact(sock, length)


def _recv_exact(sock, n: int, allow_eof: bool = False) -> bytes:
    parts = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            if allow_eof and remaining == n:
                raise PeerClosed()
            raise WireError(f"connection closed mid-frame ({n - remaining}/{n} bytes)")
        parts.append(chunk)
        remaining -= len(chunk)
    return b"".join(parts)
