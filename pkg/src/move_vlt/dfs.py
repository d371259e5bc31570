"""Dynamic Frame Sampler: class-frequency-conditioned random frame masks.

A class with tail-weighted criterion ``tau`` keeps a uniformly drawn number
of frames from ``[max(floor(tau*T), min(sigma, T)), T]``; head classes
(``tau`` near 1) therefore keep almost every frame while rare classes get
strongly varying views. Masks are drawn fresh on every call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FrameMask:
    bits: np.ndarray

    @property
    def kept(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def full(cls, T: int) -> "FrameMask":
        return cls(np.ones(T, dtype=np.int8))


def kept_bounds(tau_s: float, T: int, sigma: int) -> tuple[int, int]:
    if T < 1 or sigma < 1:
        raise ValueError("need T >= 1 and sigma >= 1")
    if not (0.0 <= tau_s <= 1.0):
        raise ValueError(f"tau must lie in [0, 1], got {tau_s}")
    # short videos (sigma > T) collapse to the full mask
    lo = min(max(math.floor(tau_s * T), sigma), T)
    return lo, T


def sample_mask(tau_s: float, T: int, sigma: int, rng: np.random.Generator) -> FrameMask:
    lo, hi = kept_bounds(tau_s, T, sigma)
    kept = int(rng.integers(lo, hi + 1))
    bits = np.zeros(T, dtype=np.int8)
    bits[rng.permutation(T)[:kept]] = 1
    return FrameMask(bits)


def sample_pair(x, tau_s: float, sigma: int, rng: np.random.Generator) -> tuple[FrameMask, FrameMask]:
    """Two independent masks for one video (``x`` is its ``[T, C]`` frames or a FeatureSequence)."""
    frames = getattr(x, "frames", x)
    T = int(np.shape(frames)[0])
    return sample_mask(tau_s, T, sigma, rng), sample_mask(tau_s, T, sigma, rng)


def sample_batch(taus: np.ndarray, T: int, sigma: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Masks ``[B, T]`` for the two views of every video in a batch.

    Per video the draw order is (first view, second view), matching
    :func:`sample_pair`.
    """
    u = np.empty((len(taus), T), dtype=np.int8)
    v = np.empty_like(u)
    for i, tau in enumerate(taus):
        a, b = sample_pair(np.empty((T, 0)), float(tau), sigma, rng)
        u[i], v[i] = a.bits, b.bits
    return u, v


def masks_to_csv_rows(video_ids, masks: np.ndarray) -> list[str]:
    """``video_id,bits`` lines for diagnostics, bits written as a 0/1 string."""
    return [f"{vid},{''.join(str(int(b)) for b in row)}" for vid, row in zip(video_ids, masks)]
