"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from diffuseslide.denoise import (
    AnalyticDenoiser,
    ConditionSpec,
    DenoiserHandle,
    LinearGaussianPrior,
)
from diffuseslide.latent import LatentVideo
from diffuseslide.synthetic import CorpusSpec, build_prior


def scalar_prior() -> LinearGaussianPrior:
    """d = 1, k = 1, A = [1], b = 0: the hand-checkable unit case."""
    return LinearGaussianPrior(
        basis=np.array([[1.0]]), mean=np.array([0.0]), dims=(1, 1, 1, 1)
    )


def small_prior(f: int = 3, h: int = 2, w: int = 2, k: int = 2, seed: int = 7) -> LinearGaussianPrior:
    """Random dense small prior for oracle cross-checks."""
    rng = np.random.default_rng(seed)
    d = f * h * w
    basis = rng.normal(size=(d, k))
    mean = rng.normal(size=d)
    return LinearGaussianPrior(basis=basis, mean=mean, dims=(1, f, h, w))


def dense_posterior_oracle(
    prior: LinearGaussianPrior,
    window: LatentVideo,
    window_start: int,
    sigma: float,
    cond: ConditionSpec | None,
    cond_precision: float,
) -> np.ndarray:
    """Posterior mean computed in full d-space via Gaussian conditioning.

    Stacks the noisy window and the soft condition as one observation
    H x + noise of x ~ N(b_w, A_w A_w^T) and applies
    mu = b + C H^T (H C H^T + R)^{-1} (obs - H b). Independent of the
    k-space solve used by the implementation.
    """
    c, width, h, w = window.dims
    a_w, b_w = prior.window_basis(window_start, width)
    d_w = a_w.shape[0]
    cov = a_w @ a_w.T
    blocks_h = [np.eye(d_w)]
    obs = [window.data.reshape(-1)]
    noise = [np.full(d_w, sigma * sigma)]
    if cond is not None and cond_precision > 0:
        sel = np.zeros((c * h * w, d_w))
        frame_elems = c * h * w
        base = cond.offset_in_window
        # rows of the condition frame inside the flattened (c, width, h, w)
        idx = (
            np.arange(c)[:, None, None] * (width * h * w)
            + base * (h * w)
            + np.arange(h)[None, :, None] * w
            + np.arange(w)[None, None, :]
        ).reshape(-1)
        sel[np.arange(frame_elems), idx] = 1.0
        blocks_h.append(sel)
        obs.append(cond.keyframe.reshape(-1))
        noise.append(np.full(frame_elems, 1.0 / cond_precision))
    big_h = np.vstack(blocks_h)
    obs_vec = np.concatenate(obs)
    r = np.diag(np.concatenate(noise))
    gain = cov @ big_h.T @ np.linalg.inv(big_h @ cov @ big_h.T + r)
    return b_w + gain @ (obs_vec - big_h @ b_w)


class StubDenoiser(DenoiserHandle):
    """Denoiser whose step applies a fixed array function to the window."""

    kind = "analytic"

    def __init__(self, fn, dims=(1, 1, 1), capability=1000):
        self.fn = fn
        self.dims = dims
        self.capability = capability

    def step(self, window, sigma_from, sigma_to, cond):
        return LatentVideo(self.fn(window.data, sigma_from, sigma_to, cond))


class FixedPosteriorDenoiser(AnalyticDenoiser):
    """Production Euler stepping around an arbitrary D(z, sigma, cond)."""

    def __init__(self, denoise_fn, dims=(1, 1, 1), capability=1000):
        self.denoise_fn = denoise_fn
        self.dims = dims
        self.capability = capability
        self.cond_precision = 0.0

    def denoise(self, window, sigma, cond):
        return LatentVideo(self.denoise_fn(window.data, sigma, cond))


def identity_denoiser(dims=(1, 1, 1), capability=1000) -> StubDenoiser:
    return StubDenoiser(lambda z, *_: z.copy(), dims=dims, capability=capability)


def mutate_frame(rng, valid: bytes) -> bytes:
    """Corrupt a valid protocol payload for fuzzing."""
    choice = rng.integers(0, 5)
    blob = bytearray(valid)
    if choice == 0:  # truncate
        return bytes(blob[: rng.integers(0, max(1, len(blob)))])
    if choice == 1:  # unknown/reserved message type
        blob[0] = int(rng.choice([0x00, 0x03, 0x42, 0x80, 0x84, 0xFF]))
        return bytes(blob)
    if choice == 2:  # flip a byte in a tensor dim table
        if len(blob) > 40:
            blob[30] ^= 0xFF
        else:
            blob.extend(b"\xff" * 4)
        return bytes(blob)
    if choice == 3:  # append garbage
        return bytes(blob) + rng.bytes(int(rng.integers(1, 9)))
    return rng.bytes(int(rng.integers(1, 64)))  # pure noise


@pytest.fixture(scope="session")
def default_spec() -> CorpusSpec:
    return CorpusSpec()


@pytest.fixture(scope="session")
def default_prior(default_spec) -> LinearGaussianPrior:
    return build_prior(default_spec)


@pytest.fixture(scope="session")
def default_denoiser(default_prior) -> AnalyticDenoiser:
    return AnalyticDenoiser(default_prior, capability=14)
