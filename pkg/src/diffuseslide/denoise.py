"""Denoiser abstraction and the exact linear-Gaussian reference denoiser.

A denoiser advances a noisy window one solver step: given the window at
noise level sigma_from, a keyframe condition, and a target level
sigma_to, it returns the window at sigma_to. The analytic implementation
here computes the exact Bayes posterior mean under a low-rank Gaussian
prior, which makes every pipeline property checkable without any model
weights.

The prior is z = b + A u with u ~ N(0, I_k), so a noisy window
z_w = b_w + A_w u + sigma * eps plus a soft observation of the condition
frame (precision ``cond_precision``) has posterior mean b_w + A_w u*
where u* solves the k x k system

    (I_k + A_w^T A_w / sigma^2 + p * (S A_w)^T (S A_w)) u*
        = A_w^T (z_w - b_w) / sigma^2 + p * (S A_w)^T (y - S b_w)

with S selecting the condition frame's rows and p = cond_precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .errors import NumericalFailure, WindowTooLongError
from .latent import LatentVideo
from .rng import NoiseSeed
from .schedule import SigmaSchedule

DEFAULT_COND_PRECISION = 1e8


@dataclass(frozen=True)
class ConditionSpec:
    """Keyframe observation anchoring one window.

    keyframe: (c, h, w) latent of the conditioning frame
    keyframe_ordinal: which keyframe this is (0-based)
    offset_in_window: frame position of the condition inside the window
    window_start: absolute frame index of the window's first frame
    metadata: opaque pass-through strings (ignored by the analytic path)
    """

    keyframe: np.ndarray
    keyframe_ordinal: int
    offset_in_window: int
    window_start: int
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        kf = np.asarray(self.keyframe, dtype=np.float64)
        if kf.ndim != 3:
            raise ValueError(f"condition keyframe must be (c, h, w), got {kf.shape}")
        if self.offset_in_window < 0:
            raise ValueError(f"condition offset must be >= 0, got {self.offset_in_window}")
        if self.window_start < 0:
            raise ValueError(f"window start must be >= 0, got {self.window_start}")
        kf = kf.copy() if kf.flags.writeable else kf
        kf.flags.writeable = False
        object.__setattr__(self, "keyframe", kf)


@dataclass(frozen=True)
class LinearGaussianPrior:
    """Low-rank Gaussian video prior z = b + A u, u ~ N(0, I_k).

    basis: (d, k) matrix whose columns are flattened basis videos
    mean: length-d flattened mean video
    dims: (c, F, h, w) of the full video, with d = c * F * h * w
    """

    basis: np.ndarray
    mean: np.ndarray
    dims: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        a = np.asarray(self.basis, dtype=np.float64)
        b = np.asarray(self.mean, dtype=np.float64)
        c, f, h, w = self.dims
        d = c * f * h * w
        if a.ndim != 2 or a.shape[0] != d:
            raise ValueError(f"basis must be ({d}, k), got {a.shape}")
        if b.shape != (d,):
            raise ValueError(f"mean must have length {d}, got {b.shape}")
        for arr in (a, b):
            if arr.flags.writeable:
                arr.flags.writeable = False
        object.__setattr__(self, "basis", a)
        object.__setattr__(self, "mean", b)

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def n_elements(self) -> int:
        return self.basis.shape[0]

    @cached_property
    def _basis_4d(self) -> np.ndarray:
        c, f, h, w = self.dims
        return self.basis.reshape(c, f, h, w, self.rank)

    @cached_property
    def _mean_4d(self) -> np.ndarray:
        c, f, h, w = self.dims
        return self.mean.reshape(c, f, h, w)

    @cached_property
    def gram(self) -> np.ndarray:
        return self.basis.T @ self.basis

    @cached_property
    def gram_condition(self) -> float:
        return float(np.linalg.cond(self.gram))

    def window_basis(self, start: int, width: int) -> tuple[np.ndarray, np.ndarray]:
        """(A_w, b_w) restricted to frames [start, start + width), flattened."""
        c, f, h, w = self.dims
        if not (0 <= start and start + width <= f):
            raise ValueError(f"window [{start}, {start + width}) outside [0, {f})")
        a_w = self._basis_4d[:, start : start + width].reshape(-1, self.rank)
        b_w = self._mean_4d[:, start : start + width].reshape(-1)
        return a_w, b_w

    def frame_subset(self, frames) -> "LinearGaussianPrior":
        """Prior over the given frame indices (subsampling, reordering, or
        repeating frames all yield exact marginals of the same u)."""
        idx = np.asarray(frames, dtype=np.intp)
        c, f, h, w = self.dims
        if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= f):
            raise ValueError("frame indices must be a 1-d array within [0, F)")
        a = self._basis_4d[:, idx].reshape(-1, self.rank)
        b = self._mean_4d[:, idx].reshape(-1)
        return LinearGaussianPrior(basis=a, mean=b, dims=(c, len(idx), h, w))

    def project_offset(self, flat: np.ndarray) -> np.ndarray:
        """Least-squares projection of a flattened offset onto span(A)."""
        try:
            coeffs = np.linalg.solve(self.gram, self.basis.T @ flat)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"prior Gram solve failed: {exc}") from exc
        return self.basis @ coeffs


def posterior_mean(
    prior: LinearGaussianPrior,
    window: LatentVideo,
    window_start: int,
    sigma: float,
    cond: ConditionSpec | None,
    cond_precision: float,
) -> LatentVideo:
    """Exact E[window | noisy window at `sigma`, soft condition observation].

    Solved in k-dimensional coefficient space, so cost is O(d_w k^2) per
    call regardless of window size.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    c, width, h, w = window.dims
    a_w, b_w = prior.window_basis(window_start, width)
    z_w = window.data.reshape(-1)

    inv_var = 1.0 / (sigma * sigma)
    lam = np.eye(prior.rank) + inv_var * (a_w.T @ a_w)
    rhs = inv_var * (a_w.T @ (z_w - b_w))

    if cond is not None and cond_precision > 0.0:
        if cond.keyframe.shape != (c, h, w):
            raise ValueError(
                f"condition dims {cond.keyframe.shape} do not match window {(c, h, w)}"
            )
        if not 0 <= cond.offset_in_window < width:
            raise ValueError(
                f"condition offset {cond.offset_in_window} outside window of {width}"
            )
        a_4d = a_w.reshape(c, width, h, w, prior.rank)
        s_a = a_4d[:, cond.offset_in_window].reshape(-1, prior.rank)
        s_b = b_w.reshape(c, width, h, w)[:, cond.offset_in_window].reshape(-1)
        y = cond.keyframe.reshape(-1)
        lam += cond_precision * (s_a.T @ s_a)
        rhs += cond_precision * (s_a.T @ (y - s_b))

    try:
        coeffs = np.linalg.solve(lam, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"posterior system singular: {exc}") from exc
    est = b_w + a_w @ coeffs
    return LatentVideo(est.reshape(c, width, h, w))


class DenoiserHandle:
    """One-solver-step interface shared by analytic and remote denoisers.

    capability: maximum window length in frames
    dims: (c, h, w) of a single frame
    kind: "analytic" or "remote"
    """

    capability: int
    dims: tuple[int, int, int]
    kind: str

    def step(
        self,
        window: LatentVideo,
        sigma_from: float,
        sigma_to: float,
        cond: ConditionSpec | None,
    ) -> LatentVideo:
        raise NotImplementedError


class AnalyticDenoiser(DenoiserHandle):
    """Exact posterior-mean denoiser over a linear-Gaussian prior."""

    kind = "analytic"

    def __init__(
        self,
        prior: LinearGaussianPrior,
        capability: int = 14,
        cond_precision: float = DEFAULT_COND_PRECISION,
    ):
        c, _, h, w = prior.dims
        self.prior = prior
        self.capability = int(capability)
        self.dims = (c, h, w)
        self.cond_precision = float(cond_precision)

    def denoise(
        self, window: LatentVideo, sigma: float, cond: ConditionSpec | None
    ) -> LatentVideo:
        """Posterior mean D(z; sigma, cond) for a window anchored by `cond`."""
        start = cond.window_start if cond is not None else 0
        return posterior_mean(
            self.prior, window, start, sigma, cond, self.cond_precision
        )

    def step(
        self,
        window: LatentVideo,
        sigma_from: float,
        sigma_to: float,
        cond: ConditionSpec | None,
    ) -> LatentVideo:
        """Euler update z + (sigma_to - sigma_from) * (z - D(z)) / sigma_from.

        When sigma_to == 0 the update cancels algebraically to D(z), which
        is returned directly so the final step lands exactly on the
        posterior mean.
        """
        denoised = self.denoise(window, sigma_from, cond)
        if sigma_to == 0.0:
            return denoised
        scale = (sigma_to - sigma_from) / sigma_from
        return LatentVideo(window.data + scale * (window.data - denoised.data))


def euler_step(
    d: DenoiserHandle,
    window: LatentVideo,
    sigma_from: float,
    sigma_to: float,
    cond: ConditionSpec | None,
) -> LatentVideo:
    """Advance a window one solver step from sigma_from down to sigma_to."""
    if not sigma_from > sigma_to or sigma_to < 0:
        raise ValueError(
            f"need sigma_from > sigma_to >= 0, got ({sigma_from}, {sigma_to})"
        )
    if window.frames > d.capability:
        raise WindowTooLongError(
            f"window of {window.frames} frames exceeds capability {d.capability}"
        )
    return d.step(window, sigma_from, sigma_to, cond)


def sample_clean(
    d: DenoiserHandle,
    s: SigmaSchedule,
    frames: int,
    cond: ConditionSpec | None,
    seed: NoiseSeed,
) -> LatentVideo:
    """Full reverse pass from pure sigma_max noise down to a clean latent."""
    if frames > d.capability:
        raise WindowTooLongError(
            f"{frames} frames exceed denoiser capability {d.capability}"
        )
    c, h, w = d.dims
    z = LatentVideo(s.sigma_max * seed.normal((c, frames, h, w)))
    for i in range(s.n_steps):
        z = euler_step(d, z, float(s.sigmas[i]), float(s.sigmas[i + 1]), cond)
    return z
