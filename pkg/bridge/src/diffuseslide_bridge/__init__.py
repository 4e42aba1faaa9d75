"""Denoiser server for the diffuseslide wire protocol."""

from .backends import (
    Backend,
    BackendError,
    EchoBackend,
    PretrainedBackend,
    ShrinkBackend,
    parse_backend,
)
from .server import BridgeServer, ServerConfig, serve

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendError",
    "BridgeServer",
    "EchoBackend",
    "PretrainedBackend",
    "ServerConfig",
    "ShrinkBackend",
    "parse_backend",
    "serve",
]
