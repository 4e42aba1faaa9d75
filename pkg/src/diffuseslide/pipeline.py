"""Frame-rate refinement orchestration.

The full pass over a low frame-rate keyframe latent:

1. linearly interpolate to the target frame rate,
2. inject Gaussian noise at the schedule level with `tau` steps left,
3. walk the schedule down to clean. While more than `delta` steps
   remain, each step runs `m_iters` cycles of window-denoise followed by
   noise re-injection back up to the current level, then one more
   window-denoise; the final `delta` steps denoise plainly.

Per step that is (m_iters + 1) fused denoise rounds above the cutoff and
one below, so a run executes (tau - delta) * (m_iters + 1) + delta
rounds in total. All noise is drawn from substreams keyed by step and
iteration, making runs bitwise reproducible at any worker count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .denoise import (
    DEFAULT_COND_PRECISION,
    ConditionSpec,
    DenoiserHandle,
    sample_clean,
)
from .latent import KeyframePlan, LatentVideo, inject_noise, interpolate
from .rng import NoiseSeed
from .schedule import (
    DEFAULT_RHO,
    DEFAULT_SIGMA_MAX,
    DEFAULT_SIGMA_MIN,
    DEFAULT_STEPS,
    InjectionPoint,
    SigmaSchedule,
    build_schedule,
)
from .windows import WindowLayout, denoise_round, plan_windows


@dataclass
class RunConfig:
    """Hyperparameters of one refinement run."""

    steps: int = DEFAULT_STEPS
    sigma_min: float = DEFAULT_SIGMA_MIN
    sigma_max: float = DEFAULT_SIGMA_MAX
    rho: float = DEFAULT_RHO
    tau: int = 8
    delta: int = 3
    m_iters: int = 5
    factor: int = 4
    window: int = 14
    stride: int | None = None  # defaults to `factor`
    seed: int = 0
    denoiser: str = "analytic"
    cond_precision: float = DEFAULT_COND_PRECISION
    threads: int = 1
    remote_timeout_ms: int = 5000
    remote_pool: int = 1

    def validate(self) -> None:
        self.injection().validate(self.steps)
        if self.factor < 1:
            raise ValueError(f"factor must be >= 1, got {self.factor}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.effective_stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.effective_stride}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    @property
    def effective_stride(self) -> int:
        return self.factor if self.stride is None else self.stride

    def injection(self) -> InjectionPoint:
        return InjectionPoint(tau=self.tau, delta=self.delta, m_iters=self.m_iters)

    def schedule(self) -> SigmaSchedule:
        return build_schedule(self.steps, self.sigma_min, self.sigma_max, self.rho)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown run-config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


@dataclass
class StepTrace:
    """Bookkeeping for one schedule step of the run."""

    remaining: int
    sigma_from: float
    sigma_to: float
    reinjection_iterations: int
    denoiser_calls: int
    window_ms: list[float] = field(default_factory=list)


@dataclass
class RunTrace:
    """Per-step records plus run-level counters."""

    steps: list[StepTrace] = field(default_factory=list)
    total_denoiser_calls: int = 0
    wall_ms: float = 0.0

    @property
    def denoise_rounds(self) -> int:
        return sum(s.reinjection_iterations + 1 for s in self.steps)

    def to_json(self, indent: int | None = 2) -> str:
        payload = {
            "steps": [asdict(s) for s in self.steps],
            "total_denoiser_calls": self.total_denoiser_calls,
            "denoise_rounds": self.denoise_rounds,
            "wall_ms": self.wall_ms,
        }
        return json.dumps(payload, indent=indent)


def reinject_round(
    z: LatentVideo,
    layout: WindowLayout,
    d: DenoiserHandle,
    s: SigmaSchedule,
    remaining: int,
    m_iters: int,
    seed: NoiseSeed,
    executor: Executor | None = None,
    trace: StepTrace | None = None,
    on_reinject: Callable[[LatentVideo, int], None] | None = None,
) -> LatentVideo:
    """One schedule step with `m_iters` denoise/re-inject cycles.

    Each cycle denoises from the level at `remaining` steps left down one
    level, then adds noise of std sqrt(sigma_tau^2 - sigma_{tau-1}^2) to
    climb back; a final denoise leaves the latent one level lower.
    Exactly m_iters + 1 fused denoise rounds run. `on_reinject` is
    invoked with the latent right after each re-injection.
    """
    if remaining < 1:
        raise ValueError("reinject_round needs at least one remaining step")
    if m_iters < 0:
        raise ValueError(f"m_iters must be >= 0, got {m_iters}")
    sigma_from = s.level_at(remaining)
    sigma_to = s.level_at(remaining - 1)
    std = s.reinjection_std(remaining) if m_iters > 0 else 0.0
    timings = trace.window_ms if trace is not None else None
    for m in range(m_iters):
        z = denoise_round(layout, z, d, sigma_from, sigma_to, executor, timings)
        z = inject_noise(z, std, seed.substream("reinject", remaining, m))
        if on_reinject is not None:
            on_reinject(z, m)
        if trace is not None:
            trace.reinjection_iterations += 1
            trace.denoiser_calls += len(layout.windows)
    z = denoise_round(layout, z, d, sigma_from, sigma_to, executor, timings)
    if trace is not None:
        trace.denoiser_calls += len(layout.windows)
    return z


def diffuse_slide(
    low: LatentVideo,
    cfg: RunConfig,
    d: DenoiserHandle,
    executor: Executor | None = None,
    on_reinject: Callable[[LatentVideo, int, int], None] | None = None,
) -> tuple[LatentVideo, RunTrace]:
    """Run the full refinement pass over a keyframe latent.

    Returns the clean high frame-rate latent and the run trace. The
    condition latents are the clean keyframes of `low`; re-injection is
    applied while more than cfg.delta steps remain.
    """
    if low.frames < 2:
        raise ValueError(f"need at least 2 keyframes, got {low.frames}")
    cfg.validate()
    s = cfg.schedule()
    plan = KeyframePlan(factor=cfg.factor, n_keyframes=low.frames)
    layout = plan_windows(
        plan.total_frames, plan, cfg.window, cfg.effective_stride, keyframes=low
    )
    root = NoiseSeed(cfg.seed)
    t0 = time.perf_counter()

    z = interpolate(low, cfg.factor)
    z = inject_noise(z, s.level_at(cfg.tau), root.substream("inject"))

    trace = RunTrace()
    for remaining in range(cfg.tau, 0, -1):
        step = StepTrace(
            remaining=remaining,
            sigma_from=s.level_at(remaining),
            sigma_to=s.level_at(remaining - 1),
            reinjection_iterations=0,
            denoiser_calls=0,
        )
        trace.steps.append(step)
        hook = None
        if on_reinject is not None:
            hook = lambda latent, m, rem=remaining: on_reinject(latent, rem, m)
        m = cfg.m_iters if remaining > cfg.delta else 0
        z = reinject_round(
            z, layout, d, s, remaining, m, root, executor, step, hook
        )
        trace.total_denoiser_calls += step.denoiser_calls
    trace.wall_ms = (time.perf_counter() - t0) * 1e3
    return z, trace


def generate_keyframes(
    cfg: RunConfig,
    d: DenoiserHandle,
    first_frame: np.ndarray,
    f: int,
    seed: NoiseSeed,
) -> LatentVideo:
    """Sample a low frame-rate latent conditioned on a first-frame image.

    `d` must be backed by a prior over the f keyframe positions (for the
    analytic denoiser, the frame-subsampled prior).
    """
    cond = ConditionSpec(
        keyframe=first_frame,
        keyframe_ordinal=0,
        offset_in_window=0,
        window_start=0,
    )
    return sample_clean(d, cfg.schedule(), f, cond, seed)
