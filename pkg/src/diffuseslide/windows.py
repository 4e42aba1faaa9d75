"""Keyframe-anchored window planning and overlap-fused denoising.

The long latent is split into fixed-width windows, one per keyframe at
start (i - 1) * stride, each conditioned on its keyframe. If those
windows leave trailing frames uncovered, one final window is clamped to
start at F - width and conditioned on the first keyframe it contains.
After every window is advanced one solver step, frames covered by
several windows are fused by arithmetic mean, accumulated in ascending
window order so results are reproducible at any worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .denoise import ConditionSpec, DenoiserHandle, euler_step
from .errors import DiffuseSlideError
from .latent import KeyframePlan, LatentVideo, keyframe_indices


@dataclass(frozen=True)
class WindowSpec:
    """One window: where it starts, how wide it is, what anchors it."""

    start: int
    width: int
    condition: ConditionSpec


@dataclass(frozen=True)
class WindowLayout:
    """Full cover of [0, F) by keyframe-conditioned windows."""

    windows: tuple[WindowSpec, ...]
    stride: int
    total_frames: int
    coverage_counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.coverage_counts, dtype=np.int64)
        if counts.shape != (self.total_frames,):
            raise ValueError("coverage_counts must have one entry per frame")
        if np.any(counts < 1):
            uncovered = np.flatnonzero(counts < 1)
            raise ValueError(f"frames without coverage: {uncovered.tolist()}")
        counts.flags.writeable = False
        object.__setattr__(self, "coverage_counts", counts)


def plan_windows(
    total_frames: int,
    plan: KeyframePlan,
    width: int,
    stride: int,
    keyframes: LatentVideo,
) -> WindowLayout:
    """Plan the window cover of a `total_frames`-long latent.

    `keyframes` is the low frame-rate latent supplying condition frames;
    its frame i sits at position plan.keyframe_index(i) in the long
    latent. Windows whose nominal start would run past F - width are
    skipped; their frames are covered by the clamped tail window.
    """
    if total_frames != plan.total_frames:
        raise ValueError(
            f"plan covers {plan.total_frames} frames, layout asked for {total_frames}"
        )
    if keyframes.frames != plan.n_keyframes:
        raise ValueError(
            f"plan expects {plan.n_keyframes} keyframes, latent has {keyframes.frames}"
        )
    if not 1 <= width <= total_frames:
        raise ValueError(f"width must be in [1, {total_frames}], got {width}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if stride > width:
        raise ValueError(
            f"stride {stride} > width {width} would leave coverage gaps"
        )

    kf_positions = keyframe_indices(plan)
    specs: list[WindowSpec] = []
    for ordinal in range(plan.n_keyframes):
        start = ordinal * stride
        if start + width > total_frames:
            break
        offset = kf_positions[ordinal] - start
        if not 0 <= offset < width:
            raise ValueError(
                f"keyframe {ordinal} at frame {kf_positions[ordinal]} falls outside "
                f"its window [{start}, {start + width}); adjust stride"
            )
        specs.append(
            WindowSpec(
                start=start,
                width=width,
                condition=ConditionSpec(
                    keyframe=keyframes.frame(ordinal),
                    keyframe_ordinal=ordinal,
                    offset_in_window=offset,
                    window_start=start,
                ),
            )
        )

    covered_to = specs[-1].start + width if specs else 0
    if covered_to < total_frames:
        start = total_frames - width
        # Anchor on the first keyframe the clamped window contains.
        inside = [i for i, p in enumerate(kf_positions) if start <= p < start + width]
        if not inside:
            raise ValueError(
                f"no keyframe inside clamped window [{start}, {start + width})"
            )
        ordinal = inside[0]
        specs.append(
            WindowSpec(
                start=start,
                width=width,
                condition=ConditionSpec(
                    keyframe=keyframes.frame(ordinal),
                    keyframe_ordinal=ordinal,
                    offset_in_window=kf_positions[ordinal] - start,
                    window_start=start,
                ),
            )
        )

    counts = np.zeros(total_frames, dtype=np.int64)
    for spec in specs:
        counts[spec.start : spec.start + spec.width] += 1
    return WindowLayout(
        windows=tuple(specs),
        stride=stride,
        total_frames=total_frames,
        coverage_counts=counts,
    )


def denoise_round(
    layout: WindowLayout,
    z: LatentVideo,
    d: DenoiserHandle,
    sigma_from: float,
    sigma_to: float,
    executor: Executor | None = None,
    timings_ms: list[float] | None = None,
) -> LatentVideo:
    """Advance every window one solver step and fuse overlaps by mean.

    Window steps are independent and may run on `executor`; the fusion
    accumulates results in ascending window order regardless, so the
    output is identical at any worker count.
    """
    if z.frames != layout.total_frames:
        raise ValueError(
            f"latent has {z.frames} frames, layout covers {layout.total_frames}"
        )

    def run_window(spec: WindowSpec) -> tuple[LatentVideo, float]:
        t0 = time.perf_counter()
        sliced = z.slice_frames(spec.start, spec.width)
        try:
            stepped = euler_step(d, sliced, sigma_from, sigma_to, spec.condition)
        except DiffuseSlideError as exc:
            raise type(exc)(
                f"window [{spec.start}, {spec.start + spec.width}): {exc}"
            ) from exc
        return stepped, (time.perf_counter() - t0) * 1e3

    if executor is None:
        results = [run_window(spec) for spec in layout.windows]
    else:
        results = list(executor.map(run_window, layout.windows))

    acc = np.zeros_like(z.data)
    for spec, (stepped, _) in zip(layout.windows, results):
        acc[:, spec.start : spec.start + spec.width] += stepped.data
    acc /= layout.coverage_counts[np.newaxis, :, np.newaxis, np.newaxis]
    if timings_ms is not None:
        timings_ms.extend(ms for _, ms in results)
    return LatentVideo(acc)
