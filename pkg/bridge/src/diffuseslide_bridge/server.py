"""Bridge server: answers HELLO and DENOISE for a configured backend.

One worker thread per connection; backend access is serialized when the
backend is not reentrant. A malformed request gets an ERROR reply (when
the socket still allows one) and costs the peer its connection, never
the listener.
"""

from __future__ import annotations

import logging
import socketserver
import threading
from dataclasses import dataclass

import numpy as np

from . import protocol as wire
from .backends import Backend, BackendError, parse_backend

log = logging.getLogger(__name__)


@dataclass
class ServerConfig:
    listen: str = ":7341"
    backend: str = "mock-echo"
    device: str = "cpu"
    max_window_frames: int | None = None  # None: backend's own limit
    frame_dims: tuple[int, int, int] = (1, 8, 8)

    def build_backend(self) -> Backend:
        return parse_backend(
            self.backend,
            max_window_frames=self.max_window_frames,
            frame_dims=self.frame_dims,
            device=self.device,
        )

    def address(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        if not port.isdigit():
            raise ValueError(f"listen address must be host:port, got {self.listen!r}")
        return (host or "127.0.0.1", int(port))


class BridgeServer:
    """Threaded TCP server for one backend."""

    def __init__(self, backend: Backend, host: str = "127.0.0.1", port: int = 0):
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                outer._serve_connection(self.request)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.backend = backend
        self._backend_lock = threading.Lock()
        self._server = Server((host, port), Handler)
        self.address = self._server.server_address
        self._thread: threading.Thread | None = None

    # -- connection handling

    def _serve_connection(self, sock) -> None:
        sock.settimeout(300.0)
        peer = sock.getpeername()
        log.debug("connection from %s", peer)
        while True:
            try:
                payload = wire.recv_frame(sock)
            except wire.PeerClosed:
                return
            except (wire.WireError, OSError) as exc:
                self._try_error(sock, 0, wire.CODE_MALFORMED, str(exc))
                return
            try:
                request = wire.parse_request(payload)
            except wire.WireError as exc:
                self._try_error(sock, 0, wire.CODE_MALFORMED, str(exc))
                return
            try:
                if isinstance(request, wire.HelloRequest):
                    if not self._answer_hello(sock, request):
                        return
                else:
                    self._answer_denoise(sock, request)
            except OSError:
                return

    def _answer_hello(self, sock, request: wire.HelloRequest) -> bool:
        if request.version != wire.PROTOCOL_VERSION:
            self._try_error(
                sock, 0, wire.CODE_BAD_VERSION,
                f"server speaks protocol {wire.PROTOCOL_VERSION}, "
                f"client sent {request.version}",
            )
            return False
        c, h, w = self.backend.frame_dims
        wire.send_frame(
            sock, wire.pack_hello_resp(self.backend.max_window_frames, c, h, w)
        )
        return True

    def _answer_denoise(self, sock, request: wire.DenoiseRequest) -> None:
        rid = request.request_id
        window = request.window
        if window.ndim != 4:
            self._try_error(sock, rid, wire.CODE_MALFORMED,
                            f"window must be 4-d, got {window.ndim}-d")
            return
        if window.shape[1] > self.backend.max_window_frames:
            self._try_error(
                sock, rid, wire.CODE_TOO_LONG,
                f"window of {window.shape[1]} frames exceeds capability "
                f"{self.backend.max_window_frames}",
            )
            return
        try:
            if self.backend.reentrant:
                outcome = self._step(request)
            else:
                with self._backend_lock:
                    outcome = self._step(request)
            result = np.ascontiguousarray(outcome.result, dtype=np.float32)
            if result.shape != window.shape:
                raise BackendError(
                    f"backend produced {result.shape}, window was {window.shape}"
                )
        except Exception as exc:
            log.warning("denoise request %d failed: %s", rid, exc)
            self._try_error(sock, rid, wire.CODE_BACKEND, str(exc))
            return
        if outcome.matched_sigma is not None:
            wire.send_frame(sock, wire.pack_step_meta(rid, outcome.matched_sigma))
        wire.send_frame(sock, wire.pack_denoise_resp(rid, result))

    def _step(self, request: wire.DenoiseRequest):
        return self.backend.step(
            request.window, request.sigma_from, request.sigma_to,
            request.cond, request.window_start, request.cond_offset,
        )

    def _try_error(self, sock, rid: int, code: int, message: str) -> None:
        log.debug("error to request %d: %s", rid, message)
        try:
            wire.send_frame(sock, wire.pack_error(rid, code, message))
        except OSError:
            pass

    # -- lifecycle

    def start(self) -> "BridgeServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "BridgeServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(config: ServerConfig) -> None:
    """Run the bridge until interrupted."""
    backend = config.build_backend()
    host, port = config.address()
    server = BridgeServer(backend, host=host, port=port)
    c, h, w = backend.frame_dims
    log.info(
        "bridge listening on %s:%d backend=%s capability=%d frames dims=(%d,%d,%d)",
        *server.address, backend.name, backend.max_window_frames, c, h, w,
    )
    try:
        server._server.serve_forever()
    finally:
        server._server.server_close()
