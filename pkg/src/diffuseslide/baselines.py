"""Reference baselines the refinement pipeline is compared against.

Linear interpolation is the pipeline's own initialization, stopped before
any denoising. Direct inference generates every frame in one pass
conditioned only on the first keyframe; its denoiser sees the prior
through positional saturation (frames beyond the backbone's trained clip
length reuse the last trained position), which reproduces the
long-sequence degradation that windowed refinement exists to avoid.
"""

from __future__ import annotations

import numpy as np

from .denoise import AnalyticDenoiser, ConditionSpec, LinearGaussianPrior, sample_clean
from .latent import LatentVideo, interpolate
from .pipeline import RunConfig
from .rng import NoiseSeed
from .synthetic import saturated_prior


def linear_interpolation(low: LatentVideo, factor: int) -> LatentVideo:
    """The interpolate-only baseline (keyframes preserved bitwise)."""
    return interpolate(low, factor)


def direct_inference(
    prior: LinearGaussianPrior,
    cfg: RunConfig,
    backbone_capability: int,
    first_keyframe: np.ndarray,
    seed: NoiseSeed,
) -> LatentVideo:
    """Sample all frames in one pass, conditioned on the first keyframe.

    The full-length window is allowed (the handle is constructed over all
    F frames), but temporal structure past `backbone_capability` frames is
    saturated, as a fixed-length backbone would see it.
    """
    total_frames = prior.dims[1]
    sat = saturated_prior(prior, backbone_capability)
    handle = AnalyticDenoiser(
        sat, capability=total_frames, cond_precision=cfg.cond_precision
    )
    cond = ConditionSpec(
        keyframe=first_keyframe,
        keyframe_ordinal=0,
        offset_in_window=0,
        window_start=0,
    )
    return sample_clean(handle, cfg.schedule(), total_frames, cond, seed)
