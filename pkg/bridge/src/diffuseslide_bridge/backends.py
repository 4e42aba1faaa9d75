"""Denoiser backends served over the bridge.

Mocks answer deterministically and are frame-count agnostic; the
pretrained adapter wraps an image-to-video latent diffusion model and
maps requested noise levels onto the model's native discrete scheduler
by nearest-sigma lookup.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class BackendError(Exception):
    """The backend could not produce a result for this request."""


@dataclass
class StepResult:
    result: np.ndarray
    matched_sigma: float | None = None  # native level actually used, if any


class Backend:
    """One solver step over a (c, frames, h, w) float32 window."""

    name: str
    max_window_frames: int
    frame_dims: tuple[int, int, int]
    reentrant: bool = True

    def step(
        self,
        window: np.ndarray,
        sigma_from: float,
        sigma_to: float,
        cond: np.ndarray,
        window_start: int,
        cond_offset: int,
    ) -> StepResult:
        raise NotImplementedError


class EchoBackend(Backend):
    """Returns the window unchanged; the transport-identity mock."""

    name = "mock-echo"

    def __init__(self, max_window_frames=14, frame_dims=(1, 8, 8)):
        self.max_window_frames = max_window_frames
        self.frame_dims = frame_dims

    def step(self, window, sigma_from, sigma_to, cond, window_start, cond_offset):
        return StepResult(result=window)


class ShrinkBackend(Backend):
    """Pulls the window toward the mid-gray latent: b + lam * (z - b)."""

    name = "mock-shrink"
    center = 0.5

    def __init__(self, lam=0.5, max_window_frames=14, frame_dims=(1, 8, 8)):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"shrink factor must be in [0, 1], got {lam}")
        self.lam = float(lam)
        self.max_window_frames = max_window_frames
        self.frame_dims = frame_dims

    def step(self, window, sigma_from, sigma_to, cond, window_start, cond_offset):
        out = self.center + self.lam * (window - self.center)
        return StepResult(result=out.astype(np.float32))


# Frame limits and latent geometry of the supported model families.
MODEL_INFO = {
    "svd": dict(max_window_frames=14, frame_dims=(4, 72, 128)),
    "i2vgen-xl": dict(max_window_frames=16, frame_dims=(4, 88, 160)),
}


class PretrainedBackend(Backend):
    """Adapter around a pretrained image-to-video latent diffusion model.

    The wrapped model exposes a discrete sigma table; a requested
    (sigma_from, sigma_to) pair is mapped to the nearest native levels and
    the matched entry level is reported back so clients can audit the
    alignment. The model itself is loaded lazily through `loader`, which
    must return an object with a `sigmas` array and a
    `step(window, sigma_from, sigma_to, cond, cond_offset)` method.
    """

    name = "pretrained"
    reentrant = False  # UNet inference is serialized per process

    def __init__(self, model_id: str, device: str = "cpu",
                 loader: Callable[[], object] | None = None):
        if model_id not in MODEL_INFO:
            raise ValueError(
                f"unknown model id {model_id!r}; known: {sorted(MODEL_INFO)}"
            )
        info = MODEL_INFO[model_id]
        self.model_id = model_id
        self.device = device
        self.max_window_frames = info["max_window_frames"]
        self.frame_dims = info["frame_dims"]
        self._loader = loader if loader is not None else self._default_loader
        self._model = None

    def _default_loader(self):
        raise BackendError(
            f"pretrained backend {self.model_id!r} needs model weights and a "
            "torch runtime; install them and pass a loader, or use a mock backend"
        )

    def _ensure_model(self):
        if self._model is None:
            self._model = self._loader()
        return self._model

    def nearest_sigma(self, sigma: float) -> float:
        """Closest level of the wrapped model's native schedule."""
        model = self._ensure_model()
        table = np.asarray(model.sigmas, dtype=np.float64)
        if table.ndim != 1 or len(table) == 0:
            raise BackendError("wrapped model exposes no sigma table")
        return float(table[np.argmin(np.abs(table - sigma))])

    def step(self, window, sigma_from, sigma_to, cond, window_start, cond_offset):
        model = self._ensure_model()
        matched_from = self.nearest_sigma(sigma_from)
        matched_to = self.nearest_sigma(sigma_to) if sigma_to > 0 else 0.0
        out = model.step(window, matched_from, matched_to, cond, cond_offset)
        return StepResult(
            result=np.asarray(out, dtype=np.float32), matched_sigma=matched_from
        )


def parse_backend(spec: str, max_window_frames=None, frame_dims=(1, 8, 8),
                  device: str = "cpu") -> Backend:
    """Build a backend from its CLI selector.

    Forms: "mock-echo", "mock-shrink", "mock-shrink:<lambda>",
    "pretrained:<model id>". Mocks take their advertised capability and
    frame dims from the server config; pretrained models own theirs.
    """
    kind, _, arg = spec.partition(":")
    mock_frames = 14 if max_window_frames is None else max_window_frames
    if kind == "mock-echo":
        if arg:
            raise ValueError("mock-echo takes no parameter")
        return EchoBackend(max_window_frames=mock_frames, frame_dims=frame_dims)
    if kind == "mock-shrink":
        lam = float(arg) if arg else 0.5
        return ShrinkBackend(
            lam=lam, max_window_frames=mock_frames, frame_dims=frame_dims
        )
    if kind == "pretrained":
        if not arg:
            raise ValueError("pretrained backend needs a model id, e.g. pretrained:svd")
        backend = PretrainedBackend(arg, device=device)
        if max_window_frames is not None and max_window_frames != backend.max_window_frames:
            raise ValueError(
                f"{arg} supports {backend.max_window_frames} frames; "
                f"cannot advertise {max_window_frames}"
            )
        return backend
    raise ValueError(f"unknown backend {spec!r}")
