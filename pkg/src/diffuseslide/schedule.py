"""Variance-exploding noise schedules.

A schedule is a strictly decreasing sequence of noise standard deviations
``sigmas[0] = sigma_max > ... > sigmas[n_steps - 1] = sigma_min`` with a
terminal zero appended, so the final solver step lands exactly on the
clean latent. Spacing follows the power-law ramp

    sigmas[i] = (sigma_max^(1/rho) + (i / (n_steps - 1))
                 * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho

which is the spacing used by the Euler solvers of the image-to-video
model family this engine targets (defaults rho=7, sigma in [0.002, 700]).

Positions in the schedule are addressed by *remaining denoise steps*:
``level_at(n_steps)`` is full noise, ``level_at(0)`` is clean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_STEPS = 25
DEFAULT_SIGMA_MIN = 0.002
DEFAULT_SIGMA_MAX = 700.0
DEFAULT_RHO = 7.0


@dataclass(frozen=True)
class SigmaSchedule:
    """Noise-level table of length ``n_steps + 1`` (terminal zero included)."""

    sigmas: np.ndarray
    n_steps: int
    sigma_min: float
    sigma_max: float
    rho: float

    def __post_init__(self) -> None:
        s = np.asarray(self.sigmas, dtype=np.float64)
        object.__setattr__(self, "sigmas", s)
        if s.shape != (self.n_steps + 1,):
            raise ValueError("sigma table must have n_steps + 1 entries")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValueError("sigma values must be finite and non-negative")
        if np.any(np.diff(s) >= 0):
            raise ValueError("sigma values must be strictly decreasing")
        if s[-1] != 0.0:
            raise ValueError("schedule must terminate at sigma = 0")
        s.flags.writeable = False

    def level_at(self, remaining: int) -> float:
        """Sigma when `remaining` denoise steps are left (0 = clean)."""
        if not 0 <= remaining <= self.n_steps:
            raise ValueError(
                f"remaining must be in [0, {self.n_steps}], got {remaining}"
            )
        return float(self.sigmas[self.n_steps - remaining])

    def reinjection_std(self, remaining: int) -> float:
        """Noise std that returns a latent denoised one step back to `remaining`."""
        if remaining < 1:
            raise ValueError("re-injection needs at least one remaining step")
        return reinjection_std(self.level_at(remaining), self.level_at(remaining - 1))


def reinjection_std(sigma_from: float, sigma_to: float) -> float:
    """Std of the noise bridging level ``sigma_to`` back up to ``sigma_from``.

    This is sqrt(sigma_from^2 - sigma_to^2): adding that much fresh Gaussian
    noise to a level-``sigma_to`` latent restores the marginal noise level
    ``sigma_from``.
    """
    if not (math.isfinite(sigma_from) and math.isfinite(sigma_to)):
        raise ValueError("sigma levels must be finite")
    if sigma_to >= sigma_from:
        raise RuntimeError(
            f"schedule not strictly decreasing: sigma_to={sigma_to} >= sigma_from={sigma_from}"
        )
    return math.sqrt(sigma_from * sigma_from - sigma_to * sigma_to)


def build_schedule(
    n_steps: int = DEFAULT_STEPS,
    sigma_min: float = DEFAULT_SIGMA_MIN,
    sigma_max: float = DEFAULT_SIGMA_MAX,
    rho: float = DEFAULT_RHO,
) -> SigmaSchedule:
    """Construct the power-spaced schedule with a terminal zero appended.

    Endpoints are pinned exactly: sigmas[0] == sigma_max and
    sigmas[n_steps - 1] == sigma_min regardless of rounding in the ramp.
    """
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    if not (0 < sigma_min < sigma_max):
        raise ValueError(
            f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
        )
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    ramp = np.arange(n_steps, dtype=np.float64) / (n_steps - 1)
    max_inv = sigma_max ** (1.0 / rho)
    min_inv = sigma_min ** (1.0 / rho)
    sigmas = (max_inv + ramp * (min_inv - max_inv)) ** rho
    sigmas[0] = sigma_max
    sigmas[-1] = sigma_min
    sigmas = np.concatenate([sigmas, [0.0]])
    return SigmaSchedule(
        sigmas=sigmas,
        n_steps=n_steps,
        sigma_min=float(sigma_min),
        sigma_max=float(sigma_max),
        rho=float(rho),
    )


@dataclass(frozen=True)
class InjectionPoint:
    """Where refinement enters the schedule and how it iterates.

    tau: denoise steps remaining at the injection level (0 < tau <= n_steps)
    delta: re-injection cutoff; the final `delta` steps run plain
    m_iters: denoise/re-inject cycles per step while above the cutoff
    """

    tau: int
    delta: int
    m_iters: int

    def validate(self, n_steps: int) -> None:
        if not 0 < self.tau <= n_steps:
            raise ValueError(f"tau must be in (0, {n_steps}], got {self.tau}")
        if not 0 <= self.delta <= self.tau:
            raise ValueError(f"delta must be in [0, tau={self.tau}], got {self.delta}")
        if self.m_iters < 0:
            raise ValueError(f"m_iters must be >= 0, got {self.m_iters}")
