"""End-to-end training with frame sampling, vicinity expansion and Adam."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dfs, move
from .autodiff import Adam, bce_with_logits, load_checkpoint, save_checkpoint, take
from .dataset import (
    FeatureSequence,
    VideoDataset,
    compute_tail_criterion,
    format_kv,
    group_split,
    parse_kv,
    rarest_positive_tau,
)
from .evaluation import REPORT_COLUMNS, evaluate
from .model import ConfigError, MoveModel

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "loss", "lr") + REPORT_COLUMNS


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, lr: float, grad_norms: dict[str, float]):
        worst = ", ".join(f"{k}={v:.3g}" for k, v in grad_norms.items())
        super().__init__(f"non-finite loss at step {step} (lr={lr:g}); grad norms: {worst}")
        self.step, self.lr, self.grad_norms = step, lr, grad_norms


@dataclass
class TrainConfig:
    epochs: int = 100
    base_lr: float = 0.001
    lr_decay_epoch: int = 50
    lr_decay_factor: float = 0.1
    batch_size: int = 32
    heads: int = 4
    clusters: int = 64
    proj_dim: int = 512
    alpha: float = 2.0
    gamma: float = 0.5
    sigma: int = 3
    seed: int = 0
    move_enabled: bool = True
    extrapolation_enabled: bool = True
    interpolation_enabled: bool = True
    aggregator: str = "psa+netvlad"
    vlad_norm: str = "intra+l2"
    criterion: str = "count"
    head_frac: float = 0.2
    tail_frac: float = 0.5

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.base_lr <= 0 or self.lr_decay_factor <= 0 or self.alpha <= 0 or self.gamma <= 0:
            raise ConfigError("learning rate, decay factor, alpha and gamma must be positive")
        if self.lr_decay_epoch > self.epochs and self.epochs > 0:
            raise ConfigError(f"lr_decay_epoch ({self.lr_decay_epoch}) exceeds epochs ({self.epochs})")
        if self.sigma < 1:
            raise ConfigError("sigma must be >= 1")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small-scale defaults for the synthetic benchmark (20 classes, C=16)."""
        base = dict(epochs=30, lr_decay_epoch=15, clusters=8, proj_dim=16, batch_size=32, base_lr=0.03)
        base.update(overrides)
        return cls(**base)

    @property
    def extrapolate(self) -> bool:
        return self.move_enabled and self.extrapolation_enabled

    @property
    def interpolate(self) -> bool:
        return self.move_enabled and self.interpolation_enabled

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        return self.base_lr * (self.lr_decay_factor if epoch >= self.lr_decay_epoch else 1.0)

    def to_text(self) -> str:
        return format_kv(dataclasses.asdict(self))

    @classmethod
    def from_mapping(cls, kv: dict[str, str], base: Optional["TrainConfig"] = None) -> "TrainConfig":
        values = dataclasses.asdict(base or cls())
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in kv.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            current = values[key]
            if isinstance(current, bool):
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ConfigError(f"{key}: expected true/false, got {raw!r}")
                values[key] = raw.lower() in ("true", "1")
            elif isinstance(current, int):
                values[key] = int(raw)
            elif isinstance(current, float):
                values[key] = float(raw)
            else:
                values[key] = raw
        return cls(**values)

    @classmethod
    def from_text(cls, text: str, base: Optional["TrainConfig"] = None) -> "TrainConfig":
        return cls.from_mapping(parse_kv(text), base)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


@dataclass
class TrainResult:
    model: MoveModel
    history: list[dict[str, float]]
    tau: np.ndarray
    groups: list[str]
    config: TrainConfig = field(default_factory=TrainConfig)

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.history)


def metrics_to_csv(history: Sequence[dict[str, float]]) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for row in history:
        lines.append(",".join(str(row[c]) if c == "epoch" else repr(float(row[c])) for c in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for parameter initialisation and the training loop."""
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def build_model(config: TrainConfig, train_set: VideoDataset, rng: np.random.Generator) -> MoveModel:
    return MoveModel.initialize(
        train_set.C, train_set.S, rng, train_set.frames, aggregator=config.aggregator,
        heads=config.heads, clusters=config.clusters, proj_dim=config.proj_dim,
        vlad_norm=config.vlad_norm,
    )


def train_step(model: MoveModel, opt: Adam, frames: np.ndarray, labels: np.ndarray,
               video_tau: np.ndarray, tau: np.ndarray, config: TrainConfig,
               rng: np.random.Generator) -> float:
    """One optimisation step; returns the batch loss.

    Draw order from ``rng``: frame masks (two per video, only when
    extrapolating), then the MOVE coefficients.
    """
    T = frames.shape[1]
    if config.extrapolate:
        mu, mv = dfs.sample_batch(video_tau, T, config.sigma, rng)
        # both views go through one forward pass
        z = model.embed(np.concatenate([frames, frames]), np.concatenate([mu, mv]))
        u = take(z, np.arange(len(frames)), axis=0)
        v = take(z, np.arange(len(frames), 2 * len(frames)), axis=0)
    else:
        u = v = model.embed(frames)
    if config.move_enabled:
        batch = move.apply_move_batch(
            u, v, labels, tau, alpha=config.alpha, gamma=config.gamma, rng=rng,
            extrapolation=config.extrapolate, interpolation=config.interpolate,
        )
        z, targets = batch.features, batch.labels
    else:
        z, targets = u, labels
    loss = bce_with_logits(model.logits(z), targets)
    opt.zero_grad()
    loss.backward()
    return float(loss.data)


def _grad_norms(model: MoveModel) -> dict[str, float]:
    return {
        name: float(np.linalg.norm(p.grad)) if p.grad is not None else float("nan")
        for name, p in model.named_parameters().items()
    }


def train(train_set: VideoDataset, config: TrainConfig, test_set: Optional[VideoDataset] = None,
          groups: Optional[Sequence[str]] = None) -> TrainResult:
    """Train from scratch; the per-epoch log is evaluated on ``test_set`` when given."""
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    counts = train_set.class_counts()
    if np.any(counts == 0):
        raise ValueError(f"classes without training videos: {np.flatnonzero(counts == 0).tolist()}")
    stats = compute_tail_criterion(counts, config.criterion)
    tau = stats.tau
    groups = list(groups) if groups is not None else group_split(counts, config.head_frac, config.tail_frac)
    labels_all = train_set.labels.astype(np.float64)
    frames_all = train_set.frames.astype(np.float64)
    video_tau = rarest_positive_tau(labels_all, tau)

    init_rng, rng = seed_streams(config.seed)
    model = build_model(config, train_set, init_rng)
    opt = Adam(model.parameters(), lr=config.base_lr)
    history: list[dict[str, float]] = []
    n = len(train_set)
    step = 0
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = train_step(model, opt, frames_all[idx], labels_all[idx], video_tau[idx], tau, config, rng)
            step += 1
            if not math.isfinite(loss):
                raise NonFiniteLossError(step, opt.lr, _grad_norms(model))
            opt.step()
            total += loss * len(idx)
        row = {"epoch": epoch + 1, "loss": total / n, "lr": opt.lr}
        if test_set is not None and len(test_set):
            row.update(evaluate(test_set, model, groups).row())
        else:
            row.update({c: float("nan") for c in REPORT_COLUMNS})
        history.append(row)
        logger.info("epoch %d loss %.5f mAP %.4f", epoch + 1, row["loss"], row["mAP_all"])
    return TrainResult(model, history, tau, groups, config)


def predict(features, model: MoveModel) -> np.ndarray:
    """Per-class scores in (0, 1) for one video (``[T, C]`` or FeatureSequence) or a batch."""
    frames = features.frames if isinstance(features, (FeatureSequence, VideoDataset)) else features
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] != model.C:
        raise ConfigError(f"feature dimension {frames.shape[-1]} does not match checkpoint C={model.C}")
    return model.scores(frames)


# -- checkpoints ----------------------------------------------------------


def save_model(directory, result_or_model, config: TrainConfig, extra: Optional[dict] = None) -> None:
    """Write ``model.movp`` and the resolved config as ``config.txt``."""
    model = getattr(result_or_model, "model", result_or_model)
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.movp", model.state_dict())
    meta = dict(C=model.C, S=model.S)
    meta.update(extra or {})
    (out / "config.txt").write_text(config.to_text() + format_kv(meta), encoding="utf-8")


def load_model(directory) -> tuple[MoveModel, TrainConfig]:
    d = Path(directory)
    kv = parse_kv((d / "config.txt").read_text(encoding="utf-8"))
    try:
        C, S = int(kv.pop("C")), int(kv.pop("S"))
    except KeyError as exc:
        raise ConfigError("config.txt lacks the model dimensions C and S") from exc
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    config = TrainConfig.from_mapping({k: v for k, v in kv.items() if k in known})
    model = MoveModel.skeleton(C, S, config.aggregator, config.heads, config.clusters,
                               config.proj_dim, config.vlad_norm)
    model.load_state_dict(load_checkpoint(d / "model.movp"))
    return model, config
