"""Video quality metrics: PSNR, SSIM, and the manifold residual.

PSNR and SSIM compare rendered pixels in [0, 1] (peak 1.0); identical
inputs hit the 99 dB cap, which stands in for the undefined PSNR of
bitwise-equal frames. The manifold residual measures how far a latent
sits from the synthetic prior's column space and is the desk-scale
realism score: refined videos should sit closer to the manifold than
their interpolated initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoise import LinearGaussianPrior
from .latent import KeyframePlan, LatentVideo, keyframe_indices

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01) ** 2  # (k1 * L)^2 with L = 1
SSIM_C2 = (0.03) ** 2


@dataclass
class MetricReport:
    """Evaluation summary for one candidate video."""

    psnr_keyframes: float
    ssim_keyframes: float
    psnr_vs_truth: float | None = None
    manifold_residual: float | None = None
    per_frame_psnr: list[float] = field(default_factory=list)
    per_frame_ssim: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "psnr_keyframes": self.psnr_keyframes,
            "ssim_keyframes": self.ssim_keyframes,
            "psnr_vs_truth": self.psnr_vs_truth,
            "manifold_residual": self.manifold_residual,
            "per_frame_psnr": self.per_frame_psnr,
            "per_frame_ssim": self.per_frame_ssim,
        }


def render_pixels(z: LatentVideo) -> np.ndarray:
    """Latent to pixel rendering for the toy prior: clamp to [0, 1]."""
    if z.channels != 1:
        raise ValueError(f"pixel rendering supports c = 1, got c = {z.channels}")
    return np.clip(z.data[0], 0.0, 1.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 * log10(1 / MSE) for same-shape tensors in [0, 1], capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("psnr inputs must be finite")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Separable valid-mode correlation; kernel is symmetric.
    n = len(kernel)
    rows = np.apply_along_axis(np.convolve, 1, img, kernel, mode="valid")
    cols = np.apply_along_axis(np.convolve, 0, rows, kernel, mode="valid")
    assert cols.shape == (img.shape[0] - n + 1, img.shape[1] - n + 1)
    return cols


def ssim(a: np.ndarray, b: np.ndarray, win_size: int = SSIM_WINDOW) -> float:
    """Mean local structural similarity over valid window positions.

    Gaussian-weighted means, variances, and covariance with an 11x11
    window of std 1.5 and constants C1 = 1e-4, C2 = 9e-4 (peak 1.0).
    Pass a smaller odd `win_size` for images narrower than 11 pixels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"ssim expects single-channel images, got {a.ndim} axes")
    if win_size % 2 != 1 or win_size < 3:
        raise ValueError(f"win_size must be odd and >= 3, got {win_size}")
    if min(a.shape) < win_size:
        raise ValueError(
            f"image {a.shape} smaller than ssim window {win_size}"
        )
    kernel = _gaussian_kernel(win_size, SSIM_SIGMA)
    mu_a = _filter_valid(a, kernel)
    mu_b = _filter_valid(b, kernel)
    e_aa = _filter_valid(a * a, kernel)
    e_bb = _filter_valid(b * b, kernel)
    e_ab = _filter_valid(a * b, kernel)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def keyframe_metrics(
    low: LatentVideo,
    high: LatentVideo,
    plan: KeyframePlan,
    truth: LatentVideo | None = None,
    prior: LinearGaussianPrior | None = None,
) -> MetricReport:
    """Fidelity of the expanded video to its keyframes, in pixel space.

    PSNR and SSIM are averaged over pairs (low frame i, high frame i * r).
    When the synthetic ground truth or prior are available the report
    additionally carries psnr_vs_truth and the manifold residual.
    """
    if high.frames != plan.total_frames:
        raise ValueError(
            f"high latent has {high.frames} frames, plan expects {plan.total_frames}"
        )
    if low.frames != plan.n_keyframes:
        raise ValueError(
            f"low latent has {low.frames} frames, plan expects {plan.n_keyframes}"
        )
    low_px = render_pixels(low)
    high_px = render_pixels(high)
    win = min(SSIM_WINDOW, _largest_odd(min(low_px.shape[1:])))
    per_psnr, per_ssim = [], []
    for i, pos in enumerate(keyframe_indices(plan)):
        per_psnr.append(psnr(low_px[i], high_px[pos]))
        per_ssim.append(ssim(low_px[i], high_px[pos], win_size=win))
    report = MetricReport(
        psnr_keyframes=float(np.mean(per_psnr)),
        ssim_keyframes=float(np.mean(per_ssim)),
        per_frame_psnr=per_psnr,
        per_frame_ssim=per_ssim,
    )
    if truth is not None:
        report.psnr_vs_truth = psnr(render_pixels(truth), high_px)
    if prior is not None:
        report.manifold_residual = manifold_residual(high, prior)
    return report


def _largest_odd(n: int) -> int:
    return n if n % 2 == 1 else n - 1


def manifold_residual(z: LatentVideo, prior: LinearGaussianPrior) -> float:
    """Root-mean-square off-manifold component of a latent.

    ||(z - b) - P_A (z - b)||_2 / sqrt(d) with P_A the orthogonal
    projector onto the prior's column space.
    """
    if z.data.size != prior.n_elements:
        raise ValueError(
            f"latent has {z.data.size} elements, prior expects {prior.n_elements}"
        )
    v = z.data.reshape(-1) - prior.mean
    resid = v - prior.project_offset(v)
    return float(np.linalg.norm(resid) / np.sqrt(prior.n_elements))
