import socket
import socketserver
import struct
import threading

import numpy as np
import pytest

from conftest import StubDenoiser

from diffuseslide.denoise import AnalyticDenoiser
from diffuseslide.errors import ProtocolError, RemoteDenoiserError, TransportError
from diffuseslide.latent import LatentVideo
from diffuseslide.pipeline import RunConfig, diffuse_slide
from diffuseslide.remote import (
    MSG_DENOISE_RESP,
    MSG_ERROR,
    MSG_HELLO_RESP,
    PROTOCOL_VERSION,
    DenoiserServer,
    Message,
    connect,
    decode_message,
    encode_denoise_req,
    encode_denoise_resp,
    encode_error,
    encode_hello_req,
    encode_hello_resp,
    encode_step_meta,
    parse_address,
    read_frame,
    write_frame,
)
from diffuseslide.synthetic import CorpusSpec, build_prior, sample_pair


def echo_denoiser(dims=(1, 4, 4), capability=14):
    return StubDenoiser(lambda z, *_: z.copy(), dims=dims, capability=capability)


def halve_denoiser(dims=(1, 4, 4), capability=14):
    return StubDenoiser(lambda z, *_: 0.5 * z, dims=dims, capability=capability)


class RawScriptServer:
    """Accepts one connection and plays back scripted raw responses."""

    def __init__(self, script):
        self.script = script  # callable(conn) -> None
        self.sock = socket.socket()
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(4)
        self.address = self.sock.getsockname()
        self.thread = threading.Thread(target=self._serve, daemon=True)
        self.thread.start()

    def _serve(self):
        try:
            while True:
                conn, _ = self.sock.accept()
                try:
                    self.script(conn)
                finally:
                    conn.close()
        except OSError:
            pass

    def close(self):
        self.sock.close()


class TestCodec:
    def test_hello_round_trip(self):
        msg = decode_message(encode_hello_req())
        assert msg.version == PROTOCOL_VERSION
        msg = decode_message(encode_hello_resp(1, 14, 1, 8, 8))
        assert msg.capability == 14 and msg.dims == (1, 8, 8)

    def test_denoise_round_trip(self):
        cond = np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2)
        window = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2)
        raw = encode_denoise_req(7, 1.5, 0.25, 4, 1, cond, window)
        msg = decode_message(raw)
        assert msg.request_id == 7
        assert msg.sigma_from == 1.5 and msg.sigma_to == 0.25
        assert msg.window_start == 4 and msg.cond_offset == 1
        assert msg.cond.tobytes() == cond.tobytes()
        assert msg.window.tobytes() == window.tobytes()

    def test_error_round_trip(self):
        msg = decode_message(encode_error(9, 3, "backend exploded"))
        assert msg.request_id == 9 and msg.code == 3
        assert msg.message == "backend exploded"

    def test_unknown_type_rejected(self):
        with pytest.raises(ProtocolError, match="unknown message type"):
            decode_message(bytes([0x55, 0, 0]))

    def test_empty_payload_rejected(self):
        with pytest.raises(ProtocolError):
            decode_message(b"")

    def test_trailing_bytes_rejected(self):
        with pytest.raises(ProtocolError):
            decode_message(encode_hello_req() + b"\x00")

    def test_parse_address(self):
        assert parse_address("10.0.0.2:7341") == ("10.0.0.2", 7341)
        assert parse_address(":7341") == ("127.0.0.1", 7341)
        with pytest.raises(ValueError):
            parse_address("nonsense")


class TestHandshake:
    def test_capability_advertised(self):
        with DenoiserServer(echo_denoiser(capability=14)) as server:
            client = connect(server.address)
            assert client.capability == 14
            assert client.dims == (1, 4, 4)
            client.close()

    def test_version_mismatch_rejected(self):
        def script(conn):
            read_frame(conn)
            write_frame(conn, encode_hello_resp(2, 14, 1, 4, 4))

        server = RawScriptServer(script)
        with pytest.raises(ProtocolError, match="protocol 2"):
            connect(server.address)
        server.close()

    def test_unreachable_address_is_transport_error(self):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        dead = probe.getsockname()
        probe.close()
        with pytest.raises(TransportError):
            connect(dead, timeout_ms=500)

    def test_silent_server_times_out(self):
        def script(conn):
            read_frame(conn)  # swallow HELLO, answer nothing
            import time

            time.sleep(2.0)

        server = RawScriptServer(script)
        with pytest.raises(TransportError, match="timed out"):
            connect(server.address, timeout_ms=200)
        server.close()


class TestRemoteDenoise:
    def test_echo_is_bitwise_identity_for_f32_values(self):
        window = LatentVideo(
            np.arange(32, dtype=np.float32).reshape(1, 2, 4, 4).astype(np.float64)
        )
        with DenoiserServer(echo_denoiser()) as server:
            client = connect(server.address)
            out = client.step(window, 2.0, 1.0, None)
            client.close()
        assert out.data.tobytes() == window.data.tobytes()

    def test_scale_by_half(self):
        window = LatentVideo(np.full((1, 2, 4, 4), 2.0))
        with DenoiserServer(halve_denoiser()) as server:
            client = connect(server.address)
            out = client.step(window, 2.0, 1.0, None)
            client.close()
        assert np.all(out.data == 1.0)

    def test_backend_failure_carries_message(self):
        def boom(z, *_):
            raise RuntimeError("backend exploded")

        with DenoiserServer(StubDenoiser(boom, dims=(1, 4, 4))) as server:
            client = connect(server.address)
            window = LatentVideo(np.zeros((1, 2, 4, 4)))
            with pytest.raises(RemoteDenoiserError, match="backend exploded"):
                client.step(window, 2.0, 1.0, None)
            client.close()

    def test_window_beyond_capability_is_rejected_by_server(self):
        with DenoiserServer(echo_denoiser(capability=2)) as server:
            client = connect(server.address)
            window = LatentVideo(np.zeros((1, 3, 4, 4)))
            with pytest.raises(RemoteDenoiserError, match="capability"):
                client.step(window, 2.0, 1.0, None)
            client.close()

    def test_nonzero_status_is_remote_error(self):
        def script(conn):
            read_frame(conn)
            write_frame(conn, encode_hello_resp(1, 14, 1, 4, 4))
            frame = read_frame(conn)
            rid = decode_message(frame).request_id
            write_frame(
                conn,
                encode_denoise_resp(rid, 1, np.zeros((1, 2, 4, 4), dtype=np.float32)),
            )

        server = RawScriptServer(script)
        client = connect(server.address)
        with pytest.raises(RemoteDenoiserError, match="status 1"):
            client.step(LatentVideo(np.zeros((1, 2, 4, 4))), 2.0, 1.0, None)
        client.close()
        server.close()

    def test_step_meta_messages_are_skipped(self):
        def script(conn):
            read_frame(conn)
            write_frame(conn, encode_hello_resp(1, 14, 1, 4, 4))
            req = decode_message(read_frame(conn))
            write_frame(conn, encode_step_meta(req.request_id, 1.23))
            write_frame(conn, encode_denoise_resp(req.request_id, 0, req.window))

        server = RawScriptServer(script)
        client = connect(server.address)
        window = LatentVideo(np.ones((1, 2, 4, 4)))
        out = client.step(window, 2.0, 1.0, None)
        assert np.all(out.data == 1.0)
        client.close()
        server.close()

    def test_result_dim_mismatch_is_protocol_error(self):
        def script(conn):
            read_frame(conn)
            write_frame(conn, encode_hello_resp(1, 14, 1, 4, 4))
            req = decode_message(read_frame(conn))
            bad = np.zeros((1, 1, 4, 4), dtype=np.float32)
            write_frame(conn, encode_denoise_resp(req.request_id, 0, bad))

        server = RawScriptServer(script)
        client = connect(server.address)
        with pytest.raises(ProtocolError, match="dims"):
            client.step(LatentVideo(np.zeros((1, 2, 4, 4))), 2.0, 1.0, None)
        client.close()
        server.close()

    def test_truncated_frame_is_protocol_error(self):
        def script(conn):
            read_frame(conn)
            write_frame(conn, encode_hello_resp(1, 14, 1, 4, 4))
            read_frame(conn)
            conn.sendall(struct.pack("<I", 100) + b"short")
            conn.close()

        server = RawScriptServer(script)
        client = connect(server.address)
        with pytest.raises(ProtocolError, match="closed mid-frame"):
            client.step(LatentVideo(np.zeros((1, 2, 4, 4))), 2.0, 1.0, None)
        client.close()
        server.close()


class TestFuzz:
    def test_ten_thousand_malformed_messages(self):
        from conftest import mutate_frame

        rng = np.random.default_rng(1234)
        cond = np.zeros((1, 1, 2, 2), dtype=np.float32)
        window = np.zeros((1, 2, 2, 2), dtype=np.float32)
        valid_frames = [
            encode_hello_req(),
            encode_hello_resp(1, 14, 1, 2, 2),
            encode_denoise_req(1, 2.0, 1.0, 0, 0, cond, window),
            encode_denoise_resp(1, 0, window),
            encode_error(0, 2, "x"),
        ]
        rejected = 0
        for i in range(10_000):
            blob = mutate_frame(rng, valid_frames[i % len(valid_frames)])
            try:
                parsed = decode_message(blob)
            except ProtocolError:
                rejected += 1
                continue
            # mutation may reproduce a well-formed frame; that is fine as
            # long as nothing escapes except ProtocolError.
            assert isinstance(parsed, Message)
        assert rejected > 9000

    def test_garbage_socket_responses_never_crash_client(self):
        rng = np.random.default_rng(99)

        def script(conn):
            try:
                read_frame(conn)
                n = int(rng.integers(1, 200))
                conn.sendall(rng.bytes(n))
            except (ProtocolError, TransportError, OSError):
                pass

        server = RawScriptServer(script)
        failures = 0
        for _ in range(40):
            with pytest.raises((ProtocolError, TransportError)):
                connect(server.address, timeout_ms=300)
            failures += 1
        assert failures == 40
        server.close()

    def test_server_survives_garbage_requests(self):
        with DenoiserServer(echo_denoiser()) as server:
            rng = np.random.default_rng(5)
            for _ in range(50):
                sock = socket.create_connection(server.address, timeout=1)
                sock.sendall(rng.bytes(int(rng.integers(1, 40))))
                sock.close()
            # listener must still answer a clean handshake
            client = connect(server.address)
            assert client.capability == 14
            client.close()


class TestTransportTransparency:
    def test_loopback_pipeline_matches_in_process(self):
        spec = CorpusSpec(n_videos=1)
        prior = build_prior(spec)
        _, low = sample_pair(prior, spec, 0)
        cfg = RunConfig(seed=77)
        analytic = AnalyticDenoiser(prior, capability=14, cond_precision=cfg.cond_precision)
        local, _ = diffuse_slide(low, cfg, analytic)
        with DenoiserServer(analytic) as server:
            client = connect(server.address, timeout_ms=10_000)
            remote, _ = diffuse_slide(low, cfg, client)
            client.close()
        diff = float(np.abs(local.data - remote.data).max())
        assert diff < 1e-6
