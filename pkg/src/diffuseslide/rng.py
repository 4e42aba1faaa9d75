"""Reproducible noise streams.

Every random draw in the engine comes from a :class:`NoiseSeed`: a root
64-bit seed plus a tuple of substream labels. Identical (seed, labels)
always produce the identical stream, independent of draw order elsewhere
and of worker count, which is what makes parallel window execution and
trace replay deterministic.

Labels may be small non-negative integers (step counters, iteration
indices) or short strings (purpose tags such as ``"inject"``); strings
are mapped to stable 32-bit values with CRC-32 so the derivation does not
depend on Python's per-process hash salt.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

Label = int | str


def _label_word(label: Label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"substream labels must be non-negative, got {label}")
        return int(label)
    raise TypeError(f"unsupported label type: {type(label).__name__}")


@dataclass(frozen=True)
class NoiseSeed:
    """A root seed plus substream labels identifying one noise stream."""

    seed: int
    labels: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.seed, (int, np.integer)):
            raise TypeError("seed must be an integer")

    def substream(self, *labels: Label) -> "NoiseSeed":
        """Derive an independent stream for the given labels."""
        words = tuple(_label_word(l) for l in labels)
        return NoiseSeed(self.seed, self.labels + words)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        entropy = int(self.seed) & 0xFFFFFFFFFFFFFFFF  # SeedSequence wants unsigned
        ss = np.random.SeedSequence(entropy=entropy, spawn_key=self.labels)
        return np.random.Generator(np.random.PCG64(ss))

    def normal(self, shape) -> np.ndarray:
        """Standard-normal draw of the given shape from this stream."""
        return self.generator().standard_normal(shape)
