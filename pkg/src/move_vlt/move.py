"""Minority-oriented vicinity expansion.

Dynamic extrapolation pushes one view of a video past the other,
``z = w*u + (1-w)*v`` with ``w ~ Beta(a, a) + 1``, keeping the label.
Calibrated interpolation then mixes instances, ``z = l*z_i + (1-l)*z_j``
with ``l ~ Beta(a, a)``, and scales each class's mixed label by
``(1 - tau_s) + gamma`` before clamping it to 1, so rare classes keep more
label mass than frequent ones.

Features may be numpy arrays or autodiff tensors; labels are plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Tensor, take


@dataclass
class MixCoefficients:
    omega: float
    lam: float
    alpha: float

    def __post_init__(self):
        if not 1.0 <= self.omega <= 2.0:
            raise ValueError(f"omega must lie in [1, 2], got {self.omega}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass
class VicinitySample:
    feature: object
    label: np.ndarray
    lam: float = 1.0


def draw_omega(alpha: float, rng: np.random.Generator, size=None):
    return rng.beta(alpha, alpha, size=size) + 1.0


def draw_lambda(alpha: float, rng: np.random.Generator, size=None):
    return rng.beta(alpha, alpha, size=size)


def _dim(x) -> tuple[int, ...]:
    return tuple(x.shape) if hasattr(x, "shape") else np.shape(x)


def extrapolate(u, v, y, alpha: float = 2.0, rng: Optional[np.random.Generator] = None,
                omega: Optional[float] = None):
    """Return ``(z_hat, y_hat)``; one scalar ``omega`` is shared by every dimension."""
    if _dim(u) != _dim(v):
        raise ValueError(f"views differ in shape: {_dim(u)} vs {_dim(v)}")
    if omega is None:
        omega = float(draw_omega(alpha, rng))
    return u * omega + v * (1.0 - omega), np.array(y, dtype=np.float64, copy=True)


def calibrate_labels(mixed: np.ndarray, tau: np.ndarray, gamma: float) -> np.ndarray:
    return np.minimum(mixed * ((1.0 - tau) + gamma), 1.0)


def calibrated_interpolate(zi, yi, zj, yj, tau, gamma: float = 0.5, alpha: float = 2.0,
                           rng: Optional[np.random.Generator] = None,
                           lam: Optional[float] = None) -> VicinitySample:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if lam is None:
        lam = float(draw_lambda(alpha, rng))
    z = zi * lam + zj * (1.0 - lam)
    mixed = lam * np.asarray(yi, dtype=np.float64) + (1.0 - lam) * np.asarray(yj, dtype=np.float64)
    return VicinitySample(z, calibrate_labels(mixed, np.asarray(tau, dtype=np.float64), gamma), lam)


@dataclass
class VicinityBatch:
    features: object  # [B, D] array or Tensor
    labels: np.ndarray  # [B, S]
    omega: np.ndarray
    lam: np.ndarray
    perm: np.ndarray


def apply_move_batch(u, v, y: np.ndarray, tau: np.ndarray, alpha: float = 2.0, gamma: float = 0.5,
                     rng: Optional[np.random.Generator] = None, extrapolation: bool = True,
                     interpolation: bool = True) -> VicinityBatch:
    """MOVE over a batch of paired views ``u, v`` of shape ``[B, D]``.

    Draw order from ``rng``: ``B`` omegas (if extrapolating), then the pairing
    permutation and ``B`` lambdas (if interpolating).
    """
    y = np.asarray(y, dtype=np.float64)
    B = y.shape[0]
    if B < 1:
        raise ValueError("empty batch")
    if extrapolation:
        if _dim(u) != _dim(v):
            raise ValueError(f"views differ in shape: {_dim(u)} vs {_dim(v)}")
        omega = draw_omega(alpha, rng, size=B)
        z = u * omega[:, None] + v * (1.0 - omega)[:, None]
    else:
        omega = np.ones(B)
        z = u
    if not interpolation:
        return VicinityBatch(z, y.copy(), omega, np.ones(B), np.arange(B))

    perm = rng.permutation(B)
    lam = draw_lambda(alpha, rng, size=B)
    partner = take(z, perm, axis=0) if isinstance(z, Tensor) else np.asarray(z)[perm]
    mixed_z = z * lam[:, None] + partner * (1.0 - lam)[:, None]
    mixed_y = lam[:, None] * y + (1.0 - lam)[:, None] * y[perm]
    labels = calibrate_labels(mixed_y, np.asarray(tau, dtype=np.float64)[None, :], gamma)
    return VicinityBatch(mixed_z, labels, omega, lam, perm)
