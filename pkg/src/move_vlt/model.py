"""Model parameters: aggregators, projections and the linear classifier."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Mapping, Optional

import numpy as np

from .aggregators import (
    CodebookParams,
    ProjectionParams,
    PSAParams,
    aggregate,
    init_codebook,
    init_projection,
    init_psa,
    masked_mean,
)
from .autodiff import Tensor, sigmoid

AGGREGATORS = ("psa+netvlad", "meanpool")


class ConfigError(ValueError):
    """Parameters or inputs disagree with the model configuration."""


class MoveModel:
    """All learnable parameters plus the forward path to class logits.

    ``aggregator="psa+netvlad"`` embeds a video as the concatenated projections
    of both aggregators; ``"meanpool"`` feeds the temporal mean straight to the
    classifier and has no aggregator parameters.
    """

    def __init__(self, C: int, S: int, aggregator: str = "psa+netvlad",
                 psa: Optional[PSAParams] = None, codebook: Optional[CodebookParams] = None,
                 proj: Optional[ProjectionParams] = None, cls_w: Optional[Tensor] = None,
                 cls_b: Optional[Tensor] = None, vlad_norm: str = "intra+l2"):
        if aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {aggregator!r}")
        self.C, self.S = C, S
        self.aggregator = aggregator
        self.psa, self.codebook, self.proj = psa, codebook, proj
        self.vlad_norm = vlad_norm
        D = self.embed_dim
        self.cls_w = cls_w if cls_w is not None else Tensor(np.zeros((D, S)), requires_grad=True)
        self.cls_b = cls_b if cls_b is not None else Tensor(np.zeros(S), requires_grad=True)
        self.cls_w.name, self.cls_b.name = "classifier.w", "classifier.b"

    @property
    def embed_dim(self) -> int:
        if self.aggregator == "meanpool":
            return self.C
        return 2 * self.proj.out_dim

    @classmethod
    def initialize(cls, C: int, S: int, rng: np.random.Generator, train_frames: np.ndarray,
                   aggregator: str = "psa+netvlad", heads: int = 4, clusters: int = 64,
                   proj_dim: int = 512, vlad_norm: str = "intra+l2") -> "MoveModel":
        """Uniform fan-in initialisation; codebook centres from random training frames.

        Draw order: PSA, codebook, projections, classifier.
        """
        psa = codebook = proj = None
        if aggregator == "psa+netvlad":
            psa = init_psa(C, heads, rng)
            codebook = init_codebook(train_frames, clusters, rng)
            proj = init_projection(C, clusters, proj_dim, rng)
            D = 2 * proj_dim
        else:
            D = C
        bound = math.sqrt(1.0 / D)
        w = Tensor(rng.uniform(-bound, bound, size=(D, S)), requires_grad=True)
        b = Tensor(rng.uniform(-bound, bound, size=S), requires_grad=True)
        return cls(C, S, aggregator, psa, codebook, proj, w, b, vlad_norm)

    # -- parameters -------------------------------------------------------

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for group in (self.psa, self.codebook, self.proj):
            if group is not None:
                out.update(group.named())
        out["classifier.w"] = self.cls_w
        out["classifier.b"] = self.cls_b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.named_parameters().items())

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        own = self.named_parameters()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ConfigError(f"{name}: checkpoint shape {value.shape} != model shape {t.shape}")
            t.data = value.copy()

    @classmethod
    def skeleton(cls, C: int, S: int, aggregator: str = "psa+netvlad", heads: int = 4,
                 clusters: int = 64, proj_dim: int = 512, vlad_norm: str = "intra+l2") -> "MoveModel":
        """Correctly shaped zero parameters, ready for :meth:`load_state_dict`."""
        dummy = np.zeros((max(clusters, 1), C))
        model = cls.initialize(C, S, np.random.default_rng(0), dummy, aggregator, heads, clusters,
                               proj_dim, vlad_norm)
        for p in model.parameters():
            p.data[...] = 0.0
        return model

    # -- forward ----------------------------------------------------------

    def embed(self, frames, masks: Optional[np.ndarray] = None) -> Tensor:
        x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=np.float64))
        if x.shape[-1] != self.C:
            raise ConfigError(f"feature dimension {x.shape[-1]} does not match model C={self.C}")
        if self.aggregator == "meanpool":
            return masked_mean(x, masks)
        return aggregate(x, masks, self.psa, self.codebook, self.proj, norm=self.vlad_norm)

    def logits(self, z) -> Tensor:
        return z @ self.cls_w + self.cls_b

    def scores(self, frames) -> np.ndarray:
        """Per-class probabilities with every frame kept; no sampling involved."""
        frames = np.asarray(frames, dtype=np.float64)
        single = frames.ndim == 2
        if single:
            frames = frames[None]
        if frames.shape[0] == 0:
            return np.zeros((0, self.S))
        z = self.embed(frames)
        out = sigmoid(self.logits(z).data)
        return out[0] if single else out

    def class_confidence(self, z: np.ndarray) -> np.ndarray:
        return sigmoid(np.asarray(z) @ self.cls_w.data + self.cls_b.data)
