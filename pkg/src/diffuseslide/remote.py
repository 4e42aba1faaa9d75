"""Length-prefixed TCP protocol for out-of-process denoisers.

Framing: every message is a u32 little-endian payload length followed by
the payload; the payload is one u8 message type plus a type-specific
body. Tensors travel as u8 ndim, ndim u32 dims, then float32 data, all
little-endian. See docs/protocol.md for the byte-level walkthrough.

Message types:

    0x01 HELLO-req      u16 protocol version
    0x81 HELLO-resp     u16 version, u16 max_window_frames, u16 c, u16 h, u16 w
    0x02 DENOISE-req    u64 request_id, f64 sigma_from, f64 sigma_to,
                        u32 window_start, u16 cond_offset,
                        wire-tensor cond, wire-tensor window
    0x82 DENOISE-resp   u64 request_id, u8 status (0 = ok), wire-tensor result
    0x83 STEP-META      u64 request_id, f64 matched_sigma (optional, may
                        precede a DENOISE-resp; clients may ignore it)
    0x7F ERROR          u64 request_id (0 if none), u16 code, u16 msg_len,
                        utf8 message

A connection carries one request at a time; concurrency comes from a
pool of connections. The server side here exists so any in-process
DenoiserHandle can be served for loopback testing and tooling.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .denoise import ConditionSpec, DenoiserHandle
from .errors import ProtocolError, RemoteDenoiserError, TransportError
from .latent import LatentVideo

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAX_PAYLOAD = 64 * 1024 * 1024
MAX_TENSOR_DIMS = 8

MSG_HELLO_REQ = 0x01
MSG_DENOISE_REQ = 0x02
MSG_ERROR = 0x7F
MSG_HELLO_RESP = 0x81
MSG_DENOISE_RESP = 0x82
MSG_STEP_META = 0x83

ERR_BAD_VERSION = 1
ERR_MALFORMED = 2
ERR_BACKEND = 3
ERR_TOO_LONG = 4


# ---------------------------------------------------------------------------
# codec


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if not 1 <= arr.ndim <= MAX_TENSOR_DIMS:
        raise ValueError(f"wire tensors carry 1..{MAX_TENSOR_DIMS} dims, got {arr.ndim}")
    head = struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape)
    return head + arr.tobytes()


def decode_tensor(buf: bytes, offset: int) -> tuple[np.ndarray, int]:
    """Parse one wire tensor, returning (array, next_offset)."""
    if offset + 1 > len(buf):
        raise ProtocolError("tensor header truncated")
    ndim = buf[offset]
    offset += 1
    if not 1 <= ndim <= MAX_TENSOR_DIMS:
        raise ProtocolError(f"implausible tensor ndim {ndim}")
    if offset + 4 * ndim > len(buf):
        raise ProtocolError("tensor dim table truncated")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    if min(dims) < 1:
        raise ProtocolError(f"zero-sized tensor dim in {dims}")
    count = 1
    for dim in dims:
        count *= dim
    nbytes = 4 * count
    if nbytes > MAX_PAYLOAD:
        raise ProtocolError(f"tensor of {nbytes} bytes exceeds limit")
    if offset + nbytes > len(buf):
        raise ProtocolError("tensor payload truncated")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(dims)
    return arr.copy(), offset + nbytes


def encode_hello_req(version: int = PROTOCOL_VERSION) -> bytes:
    return struct.pack("<BH", MSG_HELLO_REQ, version)


def encode_hello_resp(version: int, capability: int, c: int, h: int, w: int) -> bytes:
    return struct.pack("<BHHHHH", MSG_HELLO_RESP, version, capability, c, h, w)


def encode_denoise_req(
    request_id: int,
    sigma_from: float,
    sigma_to: float,
    window_start: int,
    cond_offset: int,
    cond: np.ndarray,
    window: np.ndarray,
) -> bytes:
    head = struct.pack(
        "<BQddIH", MSG_DENOISE_REQ, request_id, sigma_from, sigma_to,
        window_start, cond_offset,
    )
    return head + encode_tensor(cond) + encode_tensor(window)


def encode_denoise_resp(request_id: int, status: int, result: np.ndarray) -> bytes:
    return struct.pack("<BQB", MSG_DENOISE_RESP, request_id, status) + encode_tensor(result)


def encode_error(request_id: int, code: int, message: str) -> bytes:
    msg = message.encode("utf-8")[:65535]
    return struct.pack("<BQHH", MSG_ERROR, request_id, code, len(msg)) + msg


def encode_step_meta(request_id: int, matched_sigma: float) -> bytes:
    return struct.pack("<BQd", MSG_STEP_META, request_id, matched_sigma)


@dataclass(frozen=True)
class Message:
    """A decoded protocol message; fields depend on `msg_type`."""

    msg_type: int
    version: int | None = None
    capability: int | None = None
    dims: tuple[int, int, int] | None = None
    request_id: int | None = None
    sigma_from: float | None = None
    sigma_to: float | None = None
    window_start: int | None = None
    cond_offset: int | None = None
    cond: np.ndarray | None = None
    window: np.ndarray | None = None
    status: int | None = None
    result: np.ndarray | None = None
    code: int | None = None
    message: str | None = None
    matched_sigma: float | None = None


def decode_message(payload: bytes) -> Message:
    """Decode one framed payload; malformed input raises ProtocolError."""
    if len(payload) < 1:
        raise ProtocolError("empty payload")
    msg_type = payload[0]
    try:
        if msg_type == MSG_HELLO_REQ:
            (version,) = struct.unpack_from("<H", payload, 1)
            _expect_exact(payload, 3)
            return Message(msg_type, version=version)
        if msg_type == MSG_HELLO_RESP:
            version, cap, c, h, w = struct.unpack_from("<HHHHH", payload, 1)
            _expect_exact(payload, 11)
            return Message(msg_type, version=version, capability=cap, dims=(c, h, w))
        if msg_type == MSG_DENOISE_REQ:
            rid, s_from, s_to, wstart, coff = struct.unpack_from("<QddIH", payload, 1)
            off = 1 + struct.calcsize("<QddIH")
            cond, off = decode_tensor(payload, off)
            window, off = decode_tensor(payload, off)
            _expect_exact(payload, off)
            if not (np.isfinite(s_from) and np.isfinite(s_to)):
                raise ProtocolError("non-finite sigma in request")
            return Message(
                msg_type, request_id=rid, sigma_from=s_from, sigma_to=s_to,
                window_start=wstart, cond_offset=coff, cond=cond, window=window,
            )
        if msg_type == MSG_DENOISE_RESP:
            rid, status = struct.unpack_from("<QB", payload, 1)
            off = 1 + struct.calcsize("<QB")
            result, off = decode_tensor(payload, off)
            _expect_exact(payload, off)
            return Message(msg_type, request_id=rid, status=status, result=result)
        if msg_type == MSG_ERROR:
            rid, code, msg_len = struct.unpack_from("<QHH", payload, 1)
            off = 1 + struct.calcsize("<QHH")
            if off + msg_len != len(payload):
                raise ProtocolError("error message length mismatch")
            text = payload[off : off + msg_len].decode("utf-8", errors="replace")
            return Message(msg_type, request_id=rid, code=code, message=text)
        if msg_type == MSG_STEP_META:
            rid, sigma = struct.unpack_from("<Qd", payload, 1)
            _expect_exact(payload, 1 + struct.calcsize("<Qd"))
            return Message(msg_type, request_id=rid, matched_sigma=sigma)
    except struct.error as exc:
        raise ProtocolError(f"short message body: {exc}") from exc
    raise ProtocolError(f"unknown message type 0x{msg_type:02x}")


def _expect_exact(payload: bytes, expected_len: int) -> None:
    if len(payload) != expected_len:
        raise ProtocolError(
            f"payload length {len(payload)} does not match body ({expected_len})"
        )


# ---------------------------------------------------------------------------
# framed sockets


def write_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"refusing to send {len(payload)}-byte frame")
    try:
        sock.sendall(struct.pack("<I", len(payload)) + payload)
    except OSError as exc:
        raise TransportError(f"send failed: {exc}") from exc


def read_frame(sock: socket.socket) -> bytes:
    header = _read_exact(sock, 4)
    (length,) = struct.unpack("<I", header)
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    return _read_exact(sock, length)


def _read_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        try:
            chunk = sock.recv(n - got)
        except socket.timeout as exc:
            raise TransportError(f"read timed out after {sock.gettimeout()}s") from exc
        except OSError as exc:
            raise TransportError(f"read failed: {exc}") from exc
        if not chunk:
            raise ProtocolError(f"connection closed mid-frame ({got}/{n} bytes)")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


# ---------------------------------------------------------------------------
# client


class _Connection:
    """One TCP connection with the HELLO handshake completed."""

    def __init__(self, address: tuple[str, int], timeout_s: float):
        try:
            self.sock = socket.create_connection(address, timeout=timeout_s)
        except OSError as exc:
            raise TransportError(f"cannot connect to {address}: {exc}") from exc
        self.sock.settimeout(timeout_s)
        try:
            write_frame(self.sock, encode_hello_req())
            resp = decode_message(read_frame(self.sock))
        except Exception:
            self.sock.close()
            raise
        if resp.msg_type == MSG_ERROR:
            self.sock.close()
            raise ProtocolError(f"server rejected handshake: {resp.message}")
        if resp.msg_type != MSG_HELLO_RESP:
            self.sock.close()
            raise ProtocolError(f"expected HELLO-resp, got 0x{resp.msg_type:02x}")
        if resp.version != PROTOCOL_VERSION:
            self.sock.close()
            raise ProtocolError(
                f"server speaks protocol {resp.version}, client {PROTOCOL_VERSION}"
            )
        self.capability = resp.capability
        self.dims = resp.dims

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class RemoteDenoiser(DenoiserHandle):
    """DenoiserHandle backed by a protocol server.

    Each step is one request/response on a pooled connection; a broken
    connection is discarded so later steps reconnect.
    """

    kind = "remote"

    def __init__(self, address: tuple[str, int], timeout_ms: int = 5000, pool: int = 1):
        self.address = address
        self.timeout_s = timeout_ms / 1000.0
        self.pool_size = max(1, pool)
        self._idle: list[_Connection] = []
        self._lock = threading.Lock()
        self._next_id = 1
        probe = _Connection(address, self.timeout_s)
        self.capability = probe.capability
        self.dims = probe.dims
        self._idle.append(probe)

    def _acquire(self) -> _Connection:
        with self._lock:
            if self._idle:
                return self._idle.pop()
        return _Connection(self.address, self.timeout_s)

    def _release(self, conn: _Connection) -> None:
        with self._lock:
            if len(self._idle) < self.pool_size:
                self._idle.append(conn)
                return
        conn.close()

    def _take_id(self) -> int:
        with self._lock:
            rid = self._next_id
            self._next_id += 1
        return rid

    def step(
        self,
        window: LatentVideo,
        sigma_from: float,
        sigma_to: float,
        cond: ConditionSpec | None,
    ) -> LatentVideo:
        c, h, w = self.dims
        if window.channels != c or window.height != h or window.width != w:
            raise ValueError(
                f"window dims {window.dims} do not match server frame dims {self.dims}"
            )
        rid = self._take_id()
        if cond is not None:
            cond_arr = cond.keyframe.reshape(c, 1, h, w)
            window_start = cond.window_start
            cond_offset = cond.offset_in_window
        else:
            cond_arr = np.zeros((c, 1, h, w), dtype=np.float32)
            window_start = 0
            cond_offset = 0
        request = encode_denoise_req(
            rid, sigma_from, sigma_to, window_start, cond_offset,
            cond_arr, window.data,
        )
        conn = self._acquire()
        try:
            write_frame(conn.sock, request)
            resp = decode_message(read_frame(conn.sock))
            while resp.msg_type == MSG_STEP_META and resp.request_id == rid:
                resp = decode_message(read_frame(conn.sock))
        except (ProtocolError, TransportError):
            conn.close()
            raise
        self._release(conn)
        if resp.msg_type == MSG_ERROR:
            raise RemoteDenoiserError(
                f"remote denoiser failed (code {resp.code}): {resp.message}"
            )
        if resp.msg_type != MSG_DENOISE_RESP:
            raise ProtocolError(f"expected DENOISE-resp, got 0x{resp.msg_type:02x}")
        if resp.request_id != rid:
            raise ProtocolError(
                f"response id {resp.request_id} does not echo request {rid}"
            )
        if resp.status != 0:
            raise RemoteDenoiserError(f"remote denoiser status {resp.status}")
        if resp.result.shape != window.data.shape:
            raise ProtocolError(
                f"result dims {resp.result.shape} do not match window {window.data.shape}"
            )
        return LatentVideo(resp.result.astype(np.float64))

    def close(self) -> None:
        with self._lock:
            conns, self._idle = self._idle, []
        for conn in conns:
            conn.close()


def connect(
    address: str | tuple[str, int], timeout_ms: int = 5000, pool: int = 1
) -> RemoteDenoiser:
    """Open a pooled client to a denoiser server, completing the handshake."""
    return RemoteDenoiser(parse_address(address), timeout_ms=timeout_ms, pool=pool)


def parse_address(address: str | tuple[str, int]) -> tuple[str, int]:
    """Accept "host:port", ":port" (localhost), or a (host, port) pair."""
    if isinstance(address, tuple):
        return address
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {address!r}")
    return (host or "127.0.0.1", int(port))


# ---------------------------------------------------------------------------
# server (loopback harness; any DenoiserHandle can be served)


class DenoiserServer:
    """Threaded TCP server exposing a DenoiserHandle over the protocol."""

    def __init__(self, handle: DenoiserHandle, host: str = "127.0.0.1", port: int = 0):
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                outer._serve_connection(self.request)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.handle_ = handle
        self._server = Server((host, port), Handler)
        self.address = self._server.server_address
        self._thread: threading.Thread | None = None

    def _serve_connection(self, sock: socket.socket) -> None:
        sock.settimeout(300.0)
        while True:
            try:
                msg = decode_message(read_frame(sock))
            except (ProtocolError, TransportError) as exc:
                # Bad framing: report when the socket still works, then drop.
                try:
                    write_frame(sock, encode_error(0, ERR_MALFORMED, str(exc)))
                except (ProtocolError, TransportError, OSError):
                    pass
                return
            try:
                if not self._dispatch(sock, msg):
                    return
            except (TransportError, OSError):
                return

    def _dispatch(self, sock: socket.socket, msg: Message) -> bool:
        if msg.msg_type == MSG_HELLO_REQ:
            if msg.version != PROTOCOL_VERSION:
                write_frame(
                    sock,
                    encode_error(0, ERR_BAD_VERSION, f"unsupported version {msg.version}"),
                )
                return False
            c, h, w = self.handle_.dims
            write_frame(
                sock,
                encode_hello_resp(PROTOCOL_VERSION, self.handle_.capability, c, h, w),
            )
            return True
        if msg.msg_type == MSG_DENOISE_REQ:
            self._serve_denoise(sock, msg)
            return True
        write_frame(
            sock,
            encode_error(0, ERR_MALFORMED, f"unexpected message 0x{msg.msg_type:02x}"),
        )
        return False

    def _serve_denoise(self, sock: socket.socket, msg: Message) -> None:
        try:
            if msg.window.ndim != 4:
                raise ValueError(f"window must be 4-d, got {msg.window.ndim}")
            window = LatentVideo(msg.window.astype(np.float64))
            if window.frames > self.handle_.capability:
                write_frame(
                    sock,
                    encode_error(
                        msg.request_id, ERR_TOO_LONG,
                        f"window of {window.frames} frames exceeds "
                        f"capability {self.handle_.capability}",
                    ),
                )
                return
            cond = ConditionSpec(
                keyframe=msg.cond.astype(np.float64).reshape(msg.cond.shape[0], *msg.cond.shape[2:]),
                keyframe_ordinal=0,
                offset_in_window=msg.cond_offset,
                window_start=msg.window_start,
            )
            result = self.handle_.step(window, msg.sigma_from, msg.sigma_to, cond)
        except Exception as exc:  # backend failures must not kill the listener
            log.debug("denoise request %s failed: %s", msg.request_id, exc)
            write_frame(sock, encode_error(msg.request_id, ERR_BACKEND, str(exc)))
            return
        write_frame(sock, encode_denoise_resp(msg.request_id, 0, result.data))

    def start(self) -> "DenoiserServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "DenoiserServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
