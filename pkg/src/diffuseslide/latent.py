"""Latent video container and frame-rate expansion primitives.

A latent video is a real (channels, frames, height, width) tensor. Frame
rate expansion by a factor r maps f keyframes onto F = r * f frames:
keyframe i lands bitwise at frame i * r, the r - 1 slots after it hold
convex combinations of the bracketing keyframes, and the final r - 1
frames duplicate the last keyframe (there is no bracket to its right).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import NoiseSeed


@dataclass(frozen=True)
class LatentVideo:
    """Immutable (c, F, h, w) float64 tensor with frame-axis semantics."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise ValueError(f"latent video must have 4 axes (c, F, h, w), got {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("latent video must be finite")
        arr = arr.copy() if (arr is self.data and arr.flags.writeable) else arr
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def frame(self, index: int) -> np.ndarray:
        """Read-only (c, h, w) view of one frame."""
        return self.data[:, index]

    def slice_frames(self, start: int, count: int) -> "LatentVideo":
        """Window of `count` frames beginning at `start`."""
        if not (0 <= start and start + count <= self.frames):
            raise ValueError(
                f"frame slice [{start}, {start + count}) outside [0, {self.frames})"
            )
        return LatentVideo(self.data[:, start : start + count])


@dataclass(frozen=True)
class KeyframePlan:
    """How f keyframes map into an F = r * f frame sequence."""

    factor: int
    n_keyframes: int

    def __post_init__(self) -> None:
        if self.factor < 1:
            raise ValueError(f"factor must be >= 1, got {self.factor}")
        if self.n_keyframes < 1:
            raise ValueError(f"need at least one keyframe, got {self.n_keyframes}")

    @property
    def total_frames(self) -> int:
        return self.factor * self.n_keyframes

    @property
    def tail_dups(self) -> int:
        return self.factor - 1

    def keyframe_index(self, ordinal: int) -> int:
        """Frame position of keyframe `ordinal` (0-based)."""
        if not 0 <= ordinal < self.n_keyframes:
            raise ValueError(f"keyframe ordinal {ordinal} outside [0, {self.n_keyframes})")
        return ordinal * self.factor


def keyframe_indices(plan: KeyframePlan) -> list[int]:
    """Frame positions of all keyframes, strictly increasing."""
    return [plan.keyframe_index(i) for i in range(plan.n_keyframes)]


def interpolate(low: LatentVideo, r: int) -> LatentVideo:
    """Expand a keyframe latent to r times the frame rate.

    Inserted frame at offset t in (0, r) after keyframe i is
    (1 - t/r) * K_i + (t/r) * K_{i+1}; the last r - 1 frames copy the
    final keyframe. Keyframes themselves are preserved bitwise.
    """
    if r < 1:
        raise ValueError(f"interpolation factor must be >= 1, got {r}")
    f = low.frames
    if f < 2:
        raise ValueError(f"interpolation needs at least 2 keyframes, got {f}")
    if r == 1:
        return low
    c, _, h, w = low.dims
    out = np.empty((c, r * f, h, w), dtype=np.float64)
    for i in range(f):
        base = i * r
        out[:, base] = low.data[:, i]
        for t in range(1, r):
            if i < f - 1:
                alpha = 1.0 - t / r
                out[:, base + t] = alpha * low.data[:, i] + (t / r) * low.data[:, i + 1]
            else:
                out[:, base + t] = low.data[:, i]
    return LatentVideo(out)


def inject_noise(z: LatentVideo, sigma: float, seed: NoiseSeed) -> LatentVideo:
    """Add i.i.d. Gaussian noise of std `sigma` from the seeded stream.

    sigma = 0 returns `z` unchanged. The underlying draw does not depend
    on sigma, so scaling sigma scales the perturbation elementwise.
    """
    if not np.isfinite(sigma):
        raise ValueError(f"sigma must be finite, got {sigma}")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return z
    eps = seed.normal(z.data.shape)
    return LatentVideo(z.data + sigma * eps)
