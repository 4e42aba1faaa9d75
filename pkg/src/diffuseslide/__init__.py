"""Training-free high frame-rate video latent refinement.

The engine expands a low frame-rate keyframe latent by linear
interpolation, perturbs it with scheduled noise, and refines it with
sliding-window keyframe-conditioned denoising plus iterative noise
re-injection, against any denoiser implementing one solver step (the
exact linear-Gaussian reference denoiser in-process, or any server
speaking the wire protocol in :mod:`diffuseslide.remote`).
"""

from .denoise import (
    AnalyticDenoiser,
    ConditionSpec,
    DenoiserHandle,
    LinearGaussianPrior,
    euler_step,
    posterior_mean,
    sample_clean,
)
from .errors import (
    DiffuseSlideError,
    FormatError,
    NumericalFailure,
    ProtocolError,
    RemoteDenoiserError,
    TransportError,
    WindowTooLongError,
)
from .latent import (
    KeyframePlan,
    LatentVideo,
    inject_noise,
    interpolate,
    keyframe_indices,
)
from .metrics import MetricReport, keyframe_metrics, manifold_residual, psnr, ssim
from .pipeline import RunConfig, RunTrace, diffuse_slide, generate_keyframes, reinject_round
from .rng import NoiseSeed
from .schedule import InjectionPoint, SigmaSchedule, build_schedule, reinjection_std
from .synthetic import CorpusSpec, build_prior, sample_pair
from .tensor_io import export_frames, read_tensor, write_tensor
from .windows import WindowLayout, WindowSpec, denoise_round, plan_windows

__version__ = "0.1.0"

__all__ = [
    "AnalyticDenoiser",
    "ConditionSpec",
    "CorpusSpec",
    "DenoiserHandle",
    "DiffuseSlideError",
    "FormatError",
    "InjectionPoint",
    "KeyframePlan",
    "LatentVideo",
    "LinearGaussianPrior",
    "MetricReport",
    "NoiseSeed",
    "NumericalFailure",
    "ProtocolError",
    "RemoteDenoiserError",
    "RunConfig",
    "RunTrace",
    "SigmaSchedule",
    "TransportError",
    "WindowLayout",
    "WindowSpec",
    "WindowTooLongError",
    "build_prior",
    "build_schedule",
    "denoise_round",
    "diffuse_slide",
    "euler_step",
    "export_frames",
    "generate_keyframes",
    "inject_noise",
    "interpolate",
    "keyframe_indices",
    "keyframe_metrics",
    "manifold_residual",
    "plan_windows",
    "posterior_mean",
    "psnr",
    "read_tensor",
    "reinject_round",
    "reinjection_std",
    "sample_clean",
    "sample_pair",
    "ssim",
    "write_tensor",
]
