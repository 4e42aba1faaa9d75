"""Client-side helpers for exercising the bridge over real sockets."""

from __future__ import annotations

import socket
import struct

import numpy as np

from diffuseslide_bridge import protocol as wire


class TestClient:
    """Minimal protocol client for driving a bridge server in tests."""

    __test__ = False  # not a test class

    def __init__(self, address, timeout=5.0):
        self.sock = socket.create_connection(address, timeout=timeout)
        self.sock.settimeout(timeout)

    def send_raw(self, blob: bytes) -> None:
        self.sock.sendall(blob)

    def send_frame(self, payload: bytes) -> None:
        wire.send_frame(self.sock, payload)

    def recv_frame(self) -> bytes:
        return wire.recv_frame(self.sock)

    def hello(self, version: int = wire.PROTOCOL_VERSION) -> dict:
        self.send_frame(struct.pack("<BH", wire.HELLO_REQ, version))
        payload = self.recv_frame()
        msg_type = payload[0]
        if msg_type == wire.ERROR:
            rid, code, msg_len = struct.unpack_from("<QHH", payload, 1)
            return {"type": "error", "code": code,
                    "message": payload[13 : 13 + msg_len].decode()}
        assert msg_type == wire.HELLO_RESP
        ver, cap, c, h, w = struct.unpack_from("<HHHHH", payload, 1)
        return {"type": "hello", "version": ver, "capability": cap, "dims": (c, h, w)}

    def denoise(self, request_id, sigma_from, sigma_to, window,
                cond=None, window_start=0, cond_offset=0) -> dict:
        window = np.ascontiguousarray(window, dtype=np.float32)
        if cond is None:
            c, _, h, w = window.shape
            cond = np.zeros((c, 1, h, w), dtype=np.float32)
        head = struct.pack(
            "<BQddIH", wire.DENOISE_REQ, request_id, sigma_from, sigma_to,
            window_start, cond_offset,
        )
        self.send_frame(head + wire.pack_tensor(cond) + wire.pack_tensor(window))
        metas = []
        while True:
            payload = self.recv_frame()
            msg_type = payload[0]
            if msg_type == wire.STEP_META:
                rid, sigma = struct.unpack_from("<Qd", payload, 1)
                metas.append({"request_id": rid, "matched_sigma": sigma})
                continue
            break
        if msg_type == wire.ERROR:
            rid, code, msg_len = struct.unpack_from("<QHH", payload, 1)
            return {"type": "error", "request_id": rid, "code": code,
                    "message": payload[13 : 13 + msg_len].decode(), "metas": metas}
        assert msg_type == wire.DENOISE_RESP
        rid, status = struct.unpack_from("<QB", payload, 1)
        cur = wire._Cursor(payload)
        cur.pos = 1 + struct.calcsize("<QB")
        result = cur.take_tensor()
        cur.finish()
        return {"type": "result", "request_id": rid, "status": status,
                "result": result, "metas": metas}

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
