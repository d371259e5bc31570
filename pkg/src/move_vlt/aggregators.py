"""Learnable feature aggregators: prototypical self-attention and a NetVLAD codebook.

Both take frame features ``[T, C]`` (or a batch ``[B, T, C]``) plus a frame
mask and return a single vector per video. Masked frames are zeroed before
self-attention but still take part in the softmax with their zero keys;
the codebook path multiplies each frame's soft-assigned residual by its mask
bit, so masked frames drop out of the VLAD sum entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .autodiff import Tensor, concat, l2_normalize, reshape, softmax, sum_, transpose
from .dfs import FrameMask

VLAD_NORMS = ("none", "l2", "intra+l2")
MaskLike = Union[FrameMask, np.ndarray, None]


@dataclass
class PSAParams:
    wq: Tensor  # [h, C, d_h]
    wk: Tensor
    wv: Tensor
    wo: Tensor  # [C, C]; rows grouped by head

    @property
    def heads(self) -> int:
        return self.wq.shape[0]

    def named(self) -> dict[str, Tensor]:
        return {"psa.wq": self.wq, "psa.wk": self.wk, "psa.wv": self.wv, "psa.wo": self.wo}


@dataclass
class CodebookParams:
    centers: Tensor  # [K, C]
    w: Tensor  # [K, C]
    b: Tensor  # [K]

    @property
    def clusters(self) -> int:
        return self.centers.shape[0]

    def named(self) -> dict[str, Tensor]:
        return {"codebook.centers": self.centers, "codebook.w": self.w, "codebook.b": self.b}


@dataclass
class ProjectionParams:
    theta_w: Tensor  # [C, D_p]
    theta_b: Tensor  # [D_p]
    phi_w: Tensor  # [C*K, D_p]
    phi_b: Tensor  # [D_p]

    @property
    def out_dim(self) -> int:
        return self.theta_w.shape[1]

    def named(self) -> dict[str, Tensor]:
        return {
            "proj.theta_w": self.theta_w, "proj.theta_b": self.theta_b,
            "proj.phi_w": self.phi_w, "proj.phi_b": self.phi_b,
        }


# -- initialisation -------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def init_psa(C: int, heads: int, rng: np.random.Generator) -> PSAParams:
    if heads < 1 or C % heads:
        raise ValueError(f"heads ({heads}) must divide the feature dimension ({C})")
    d = C // heads
    return PSAParams(
        wq=_uniform(rng, (heads, C, d), C, "psa.wq"),
        wk=_uniform(rng, (heads, C, d), C, "psa.wk"),
        wv=_uniform(rng, (heads, C, d), C, "psa.wv"),
        wo=_uniform(rng, (C, C), C, "psa.wo"),
    )


def init_codebook(frames: np.ndarray, K: int, rng: np.random.Generator, alpha: float = 1.0) -> CodebookParams:
    """Centers from ``K`` random training frames; ``w = 2*alpha*mu``, ``b = -alpha*|mu|^2``.

    With that warm start the assignment logits equal ``-alpha*|x - mu_k|^2``
    up to a per-frame constant, i.e. a soft nearest-centre rule.
    """
    pool = np.asarray(frames, dtype=np.float64).reshape(-1, np.shape(frames)[-1])
    if K < 1:
        raise ValueError("need at least one cluster")
    pick = rng.choice(pool.shape[0], size=K, replace=pool.shape[0] < K)
    mu = pool[pick].copy()
    return CodebookParams(
        centers=Tensor(mu, requires_grad=True, name="codebook.centers"),
        w=Tensor(2.0 * alpha * mu, requires_grad=True, name="codebook.w"),
        b=Tensor(-alpha * (mu * mu).sum(axis=1), requires_grad=True, name="codebook.b"),
    )


def init_projection(C: int, K: int, out_dim: int, rng: np.random.Generator) -> ProjectionParams:
    return ProjectionParams(
        theta_w=_uniform(rng, (C, out_dim), C, "proj.theta_w"),
        theta_b=_uniform(rng, (out_dim,), C, "proj.theta_b"),
        phi_w=_uniform(rng, (C * K, out_dim), C * K, "proj.phi_w"),
        phi_b=_uniform(rng, (out_dim,), C * K, "proj.phi_b"),
    )


# -- helpers --------------------------------------------------------------


def _batch(x, mask: MaskLike) -> tuple[Tensor, np.ndarray, bool]:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)
    B, T, _ = x.shape
    if mask is None:
        m = np.ones((B, T))
    else:
        m = np.asarray(mask.bits if isinstance(mask, FrameMask) else mask, dtype=np.float64)
        m = m.reshape(B, T)
    if np.any(m.sum(axis=1) < 1):
        raise ValueError("frame mask keeps no frames")
    return x, m, single


def _unbatch(t: Tensor, single: bool) -> Tensor:
    return reshape(t, t.shape[1:]) if single else t


def _attention(x: Tensor, m: np.ndarray, p: PSAParams) -> tuple[Tensor, Tensor, Tensor]:
    B, T, C = x.shape
    h = p.heads
    d = C // h
    xm = x * m[:, :, None]
    pooled = sum_(xm, axis=1, keepdims=True) * (1.0 / m.sum(axis=1))[:, None, None]
    q = reshape(pooled, (B, 1, 1, C)) @ p.wq  # [B,h,1,d]
    xm4 = reshape(xm, (B, 1, T, C))
    k = xm4 @ p.wk  # [B,h,T,d]
    v = xm4 @ p.wv
    attn = softmax((q @ transpose(k)) * (1.0 / math.sqrt(d)), axis=-1)  # [B,h,1,T]
    return attn, v, xm


# -- aggregators ----------------------------------------------------------


def psa_forward(x, mask: MaskLike, params: PSAParams) -> Tensor:
    """Prototype ``[C]`` (or ``[B, C]``): the masked temporal mean attends over the frames."""
    x, m, single = _batch(x, mask)
    B, T, C = x.shape
    h = params.heads
    attn, v, _ = _attention(x, m, params)
    heads = attn @ v  # [B,h,1,d]
    # concat(heads) @ wo == sum over heads of head_i @ wo[rows of head i]
    wo = reshape(params.wo, (h, C // h, C))
    out = sum_(heads @ wo, axis=1)  # [B,1,C]
    return _unbatch(reshape(out, (B, C)), single)


def attention_scores(x, mask: MaskLike, params: PSAParams) -> np.ndarray:
    """Post-softmax per-frame attention, ``[h, T]`` (or ``[B, h, T]``)."""
    x, m, single = _batch(x, mask)
    attn, _, _ = _attention(x, m, params)
    out = attn.data[:, :, 0, :]
    return out[0] if single else out


def cluster_assignments(x, params: CodebookParams) -> np.ndarray:
    """Soft assignment of every frame to every cluster, ``[T, K]`` (or ``[B, T, K]``)."""
    x, _, single = _batch(x, None)
    rho = softmax(x.data @ params.w.data.T + params.b.data, axis=-1).data
    return rho[0] if single else rho


def vlad_residuals(x, mask: MaskLike, params: CodebookParams) -> Tensor:
    """Masked soft-assigned residual sums ``[K, C]`` before any normalisation."""
    x, m, single = _batch(x, mask)
    rho = softmax(x @ transpose(params.w) + params.b, axis=-1)  # [B,T,K]
    a = rho * m[:, :, None]
    weighted = transpose(a) @ x  # [B,K,C]
    mass = reshape(sum_(a, axis=1), (a.shape[0], a.shape[2], 1))
    return _unbatch(weighted - mass * params.centers, single)


def netvlad_forward(x, mask: MaskLike, params: CodebookParams, norm: str = "intra+l2") -> Tensor:
    """Codebook descriptor of length ``K*C``, flattened cluster-major."""
    if norm not in VLAD_NORMS:
        raise ValueError(f"unknown VLAD normalisation {norm!r}")
    res = vlad_residuals(x, mask, params)
    single = res.ndim == 2
    if single:
        res = reshape(res, (1,) + res.shape)
    B, K, C = res.shape
    if norm == "intra+l2":
        res = l2_normalize(res, axis=-1)
    flat = reshape(res, (B, K * C))
    if norm != "none":
        flat = l2_normalize(flat, axis=-1)
    return _unbatch(flat, single)


def aggregate(x, mask: MaskLike, psa: PSAParams, cb: CodebookParams, proj: ProjectionParams,
              norm: str = "intra+l2") -> Tensor:
    """Video embedding ``f_theta(prototype) ++ f_phi(descriptor)`` of length ``2*D_p``."""
    proto = psa_forward(x, mask, psa)
    desc = netvlad_forward(x, mask, cb, norm=norm)
    a = proto @ proj.theta_w + proj.theta_b if proto.ndim == 2 else _affine1(proto, proj.theta_w, proj.theta_b)
    b = desc @ proj.phi_w + proj.phi_b if desc.ndim == 2 else _affine1(desc, proj.phi_w, proj.phi_b)
    return concat([a, b], axis=-1)


def _affine1(v: Tensor, w: Tensor, b: Tensor) -> Tensor:
    row = reshape(v, (1, v.shape[0])) @ w + b
    return reshape(row, (w.shape[1],))


def masked_mean(x, mask: MaskLike = None) -> Tensor:
    """Temporal average over kept frames; the aggregator-free baseline embedding."""
    x, m, single = _batch(x, mask)
    B, T, C = x.shape
    pooled = sum_(x * m[:, :, None], axis=1) * (1.0 / m.sum(axis=1))[:, None]
    return _unbatch(pooled, single)


# -- diagnostic CSV -------------------------------------------------------


def attention_csv_rows(video_ids, scores: np.ndarray) -> list[str]:
    """``video_id,frame,head,score`` rows from ``[B, h, T]`` scores."""
    rows = []
    for vid, per_video in zip(video_ids, scores):
        for head, per_head in enumerate(per_video):
            for frame, s in enumerate(per_head):
                rows.append(f"{vid},{frame},{head},{float(s)!r}")
    return rows


def assignment_csv_rows(video_ids, rho: np.ndarray) -> list[str]:
    """``video_id,frame,cluster,rho`` rows from ``[B, T, K]`` assignments."""
    rows = []
    for vid, per_video in zip(video_ids, rho):
        for frame, per_frame in enumerate(per_video):
            for cluster, r in enumerate(per_frame):
                rows.append(f"{vid},{frame},{cluster},{float(r)!r}")
    return rows
