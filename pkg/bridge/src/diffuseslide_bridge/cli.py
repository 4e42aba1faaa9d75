"""Bridge command line: `bridge --listen :7341 --backend mock-echo`."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .server import ServerConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridge",
        description="Serve a denoiser backend over the diffuseslide wire protocol",
    )
    parser.add_argument("--listen", default=":7341", help="host:port to bind")
    parser.add_argument(
        "--backend", default="mock-echo",
        help="mock-echo | mock-shrink[:lambda] | pretrained:<model id>",
    )
    parser.add_argument("--device", default="cpu")
    parser.add_argument(
        "--frames", type=int, default=None,
        help="advertised window capability (mock backends only)",
    )
    parser.add_argument("--channels", type=int, default=1)
    parser.add_argument("--height", type=int, default=8)
    parser.add_argument("--width", type=int, default=8)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("BRIDGE_LOG", "INFO").upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    config = ServerConfig(
        listen=args.listen,
        backend=args.backend,
        device=args.device,
        max_window_frames=args.frames,
        frame_dims=(args.channels, args.height, args.width),
    )
    try:
        serve(config)
    except ValueError as exc:
        print(f"bridge: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
