"""Synthetic corpus: grating priors, ground-truth videos, keyframe inputs.

The prior's basis videos are spatio-temporal cosine gratings

    cos(2 pi (p x + q y) / h + omega t + phi)

with integer spatial frequencies (p, q), nonzero temporal frequency
omega, and phase phi drawn once per basis from a seeded generator, around
a constant mean of 0.5. Nonzero omega guarantees that piecewise-linear
frame interpolation of a prior sample leaves the manifold (the ghosting
analog), while the model stays exactly linear-Gaussian.

Each corpus item is a ground-truth high frame-rate sample b + A u plus
its every-r-th-frame subsampling, the keyframe input to refinement.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .denoise import LinearGaussianPrior
from .latent import LatentVideo
from .rng import NoiseSeed

OMEGA_RANGE = (0.15, 0.55)  # rad/frame; keeps interpolation error moderate
MAX_SPATIAL_FREQ = 3
MAX_GRAM_CONDITION = 1e6
_BUILD_ATTEMPTS = 64


@dataclass(frozen=True)
class CorpusSpec:
    """Parameters of one synthetic corpus."""

    n_videos: int = 20
    channels: int = 1
    height: int = 8
    width: int = 8
    n_keyframes: int = 14
    factor: int = 4
    rank: int = 6
    seed: int = 0
    amplitude: float = 0.15

    def __post_init__(self) -> None:
        for name in ("n_videos", "channels", "height", "width", "n_keyframes",
                     "factor", "rank"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")

    @property
    def total_frames(self) -> int:
        return self.factor * self.n_keyframes

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.channels, self.total_frames, self.height, self.width)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown corpus keys: {sorted(unknown)}")
        return cls(**data)


class PriorConstructionError(RuntimeError):
    """The drawn grating set was too close to rank-deficient."""


def _grating(
    dims: tuple[int, int, int, int], p: int, q: int, omega: float, phi: float
) -> np.ndarray:
    c, f, h, w = dims
    t = np.arange(f, dtype=np.float64)[:, None, None]
    y = np.arange(h, dtype=np.float64)[None, :, None]
    x = np.arange(w, dtype=np.float64)[None, None, :]
    frame_phase = 2.0 * np.pi * (p * x + q * y) / h + omega * t + phi
    g = np.cos(frame_phase)
    return np.broadcast_to(g, (c, f, h, w)).reshape(-1)


def build_prior(spec: CorpusSpec) -> LinearGaussianPrior:
    """Deterministically draw the grating basis for a corpus.

    Draws are retried (within the same stream) until the Gram matrix is
    well conditioned; a degenerate basis after the retry budget raises
    PriorConstructionError.
    """
    d = int(np.prod(spec.dims))
    if spec.rank > d:
        raise ValueError(f"rank {spec.rank} exceeds dimension {d}")
    rng = NoiseSeed(spec.seed).substream("prior").generator()
    mean = np.full(d, 0.5)
    for _ in range(_BUILD_ATTEMPTS):
        cols = []
        while len(cols) < spec.rank:
            p = int(rng.integers(0, MAX_SPATIAL_FREQ + 1))
            q = int(rng.integers(0, MAX_SPATIAL_FREQ + 1))
            if p == 0 and q == 0:
                continue
            omega = float(rng.uniform(*OMEGA_RANGE)) * float(rng.choice([-1.0, 1.0]))
            phi = float(rng.uniform(0.0, 2.0 * np.pi))
            cols.append(_grating(spec.dims, p, q, omega, phi))
        basis = np.stack(cols, axis=1)
        prior = LinearGaussianPrior(basis=basis, mean=mean, dims=spec.dims)
        if np.isfinite(prior.gram_condition) and prior.gram_condition < MAX_GRAM_CONDITION:
            return prior
    raise PriorConstructionError(
        f"no well-conditioned basis of rank {spec.rank} after {_BUILD_ATTEMPTS} draws"
    )


def sample_pair(
    prior: LinearGaussianPrior, spec: CorpusSpec, index: int
) -> tuple[LatentVideo, LatentVideo]:
    """(truth_high, low) for corpus item `index`.

    truth_high = b + A u with u ~ N(0, amplitude^2 I) from the item's
    substream; low is its every-r-th frame (the keyframes), bitwise.
    """
    if not 0 <= index < spec.n_videos:
        raise ValueError(f"index {index} outside corpus of {spec.n_videos}")
    u = spec.amplitude * NoiseSeed(spec.seed).substream("item", index).normal(spec.rank)
    flat = prior.mean + prior.basis @ u
    truth = LatentVideo(flat.reshape(spec.dims))
    low = LatentVideo(truth.data[:, :: spec.factor])
    return truth, low


def saturated_prior(prior: LinearGaussianPrior, max_frames: int) -> LinearGaussianPrior:
    """Prior as seen by a model whose temporal positions saturate.

    Frame t beyond `max_frames` reuses the basis rows of frame
    max_frames - 1, mimicking a backbone that only learned positional
    structure for its trained clip length. Sampling through this prior is
    the degraded direct-inference baseline: beyond the trained range the
    video freezes, which is far off the true manifold.
    """
    c, f, h, w = prior.dims
    if not 1 <= max_frames <= f:
        raise ValueError(f"max_frames must be in [1, {f}], got {max_frames}")
    idx = np.minimum(np.arange(f), max_frames - 1)
    return prior.frame_subset(idx)


def keyframe_prior(prior: LinearGaussianPrior, factor: int) -> LinearGaussianPrior:
    """Exact marginal prior over the keyframe positions (every r-th frame)."""
    c, f, h, w = prior.dims
    return prior.frame_subset(np.arange(0, f, factor))


def write_corpus(spec: CorpusSpec, out_dir: str | Path) -> dict:
    """Materialize the corpus as tensor files plus a manifest JSON."""
    from .tensor_io import write_tensor

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prior = build_prior(spec)
    items = []
    for i in range(spec.n_videos):
        truth, low = sample_pair(prior, spec, i)
        truth_path = out / f"truth_{i:04d}.lvt"
        low_path = out / f"low_{i:04d}.lvt"
        write_tensor(truth_path, truth.data)
        write_tensor(low_path, low.data)
        items.append(
            {"index": i, "truth": truth_path.name, "low": low_path.name}
        )
    manifest = {
        "spec": spec.to_dict(),
        "gram_condition": prior.gram_condition,
        "items": items,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_manifest(corpus_dir: str | Path) -> tuple[CorpusSpec, dict]:
    """Read back a corpus manifest and its spec."""
    path = Path(corpus_dir) / "manifest.json"
    manifest = json.loads(path.read_text())
    return CorpusSpec.from_dict(manifest["spec"]), manifest
