"""Grouped ranking metrics and the within-class interpolation confidence diagnostic."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import GROUPS, HEAD, MEDIUM, TAIL, VideoDataset

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("mAP_all", "mAP_head", "mAP_medium", "mAP_tail", "top1", "top5")


def _ranking(scores: np.ndarray) -> np.ndarray:
    # descending score, ties by ascending index
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def average_precision(scores: Sequence[float], positives: Sequence[float]) -> float:
    """Mean of precision@k over the ranks k of the positives.

    Returns NaN when there are no positives so the class can be skipped.
    """
    pos = np.asarray(positives) > 0.5
    if pos.size != np.size(scores):
        raise ValueError("scores and positives differ in length")
    if not pos.any():
        return float("nan")
    hits = pos[_ranking(scores)]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def top_k_accuracy(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0.5
    k = min(k, scores.shape[1])
    hit = 0
    for s, y in zip(scores, labels):
        hit += bool(y[_ranking(s)[:k]].any())
    return hit / scores.shape[0]


@dataclass
class MetricReport:
    map_all: float
    map_head: float
    map_medium: float
    map_tail: float
    top1: float
    top5: float
    per_class_ap: np.ndarray
    groups: list[str] = field(default_factory=list)

    def row(self) -> dict[str, float]:
        return dict(zip(REPORT_COLUMNS, (self.map_all, self.map_head, self.map_medium,
                                         self.map_tail, self.top1, self.top5)))

    def to_csv(self) -> str:
        vals = self.row()
        return ",".join(REPORT_COLUMNS) + "\n" + ",".join(repr(float(v)) for v in vals.values()) + "\n"

    def per_class_csv(self, counts: Sequence[int]) -> str:
        lines = ["class,count,group,ap"]
        for s, (n, g, ap) in enumerate(zip(counts, self.groups, self.per_class_ap)):
            lines.append(f"{s},{int(n)},{g},{float(ap)!r}")
        return "\n".join(lines) + "\n"


def _group_mean(ap: np.ndarray, groups: Sequence[str], name: str) -> float:
    sel = np.array([g == name for g in groups]) & ~np.isnan(ap)
    return float(ap[sel].mean()) if sel.any() else float("nan")


def evaluate_scores(scores: np.ndarray, labels: np.ndarray, groups: Sequence[str]) -> MetricReport:
    """Metrics from a score matrix ``[N, S]`` and multi-hot labels ``[N, S]``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("evaluation needs a non-empty test set")
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} vs labels {labels.shape}")
    if len(groups) != scores.shape[1] or set(groups) - set(GROUPS):
        raise ValueError("every class needs a head/medium/tail group")
    ap = np.array([average_precision(scores[:, s], labels[:, s]) for s in range(scores.shape[1])])
    valid = ~np.isnan(ap)
    return MetricReport(
        map_all=float(ap[valid].mean()) if valid.any() else float("nan"),
        map_head=_group_mean(ap, groups, HEAD),
        map_medium=_group_mean(ap, groups, MEDIUM),
        map_tail=_group_mean(ap, groups, TAIL),
        top1=top_k_accuracy(scores, labels, 1),
        top5=top_k_accuracy(scores, labels, 5),
        per_class_ap=ap,
        groups=list(groups),
    )


def evaluate(test_set: VideoDataset, model, groups: Sequence[str]) -> MetricReport:
    if len(test_set) == 0:
        raise ValueError("evaluation needs a non-empty test set")
    return evaluate_scores(model.scores(test_set.frames), test_set.labels, groups)


@dataclass
class ConfidenceGapRow:
    cls: int
    tau: float
    conf_original: float
    conf_interp: float
    normalized_diff: float


@dataclass
class ConfidenceGap:
    rows: list[ConfidenceGapRow]
    skipped: list[int]

    def to_csv(self) -> str:
        lines = ["class,tau,conf_original,conf_interp,normalized_diff"]
        for r in self.rows:
            lines.append(f"{r.cls},{r.tau!r},{r.conf_original!r},{r.conf_interp!r},{r.normalized_diff!r}")
        return "\n".join(lines) + "\n"

    def group_mean(self, groups: Sequence[str], name: str) -> float:
        vals = [r.normalized_diff for r in self.rows if groups[r.cls] == name]
        return float(np.mean(vals)) if vals else float("nan")


def confidence_gap(test_set: VideoDataset, model, lambda_draws: int, rng: np.random.Generator,
                   alpha: float = 2.0, tau: Optional[np.ndarray] = None) -> ConfidenceGap:
    """True-class confidence of originals versus same-class interpolants.

    For every class with at least two videos, ``lambda_draws`` random pairs of
    distinct videos are mixed at the embedding level with ``l ~ Beta(a, a)``.
    ``normalized_diff = (orig - interp) / orig``.
    """
    z = model.embed(test_set.frames).data
    labels = test_set.labels > 0.5
    S = labels.shape[1]
    tau = np.full(S, np.nan) if tau is None else np.asarray(tau, dtype=np.float64)
    rows, skipped = [], []
    for c in range(S):
        idx = np.flatnonzero(labels[:, c])
        if idx.size < 2:
            logger.warning("class %d has %d test videos; skipping confidence gap", c, idx.size)
            skipped.append(c)
            continue
        zc = z[idx]
        orig = float(model.class_confidence(zc)[:, c].mean())
        i = rng.integers(0, idx.size, size=lambda_draws)
        j = (i + rng.integers(1, idx.size, size=lambda_draws)) % idx.size
        lam = rng.beta(alpha, alpha, size=lambda_draws)[:, None]
        mixed = lam * zc[i] + (1.0 - lam) * zc[j]
        interp = float(model.class_confidence(mixed)[:, c].mean())
        rows.append(ConfidenceGapRow(c, float(tau[c]), orig, interp, (orig - interp) / orig))
    return ConfidenceGap(rows, skipped)
