"""Class statistics, synthetic long-tailed video features and feature-file I/O."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .binio import FormatError, Reader

STRATEGIES = ("count", "log", "sqrt", "log-sqrt", "linear")
HEAD, MEDIUM, TAIL = "head", "medium", "tail"
GROUPS = (HEAD, MEDIUM, TAIL)

FEATURE_MAGIC = b"MVFT"
FEATURE_VERSION = 1
FEATURE_HEADER = struct.Struct("<4sIQIII")


# ---------------------------------------------------------------------------
# tail-weighted criterion
# ---------------------------------------------------------------------------


@dataclass
class ClassStats:
    q: np.ndarray
    tau: np.ndarray
    strategy: str


def _minmax(q: np.ndarray) -> np.ndarray:
    lo, hi = q.min(), q.max()
    if hi <= lo:
        # balanced data: every class gets the widest frame-sampling range
        return np.zeros_like(q)
    return (q - lo) / (hi - lo)


def compute_tail_criterion(counts: Sequence[float], strategy: str = "count") -> ClassStats:
    """Turn per-class sample counts into ``q`` and its min-max normalisation ``tau``.

    ``tau`` is 1 for the most frequent class and 0 for the rarest. When all
    classes have the same ``q`` the normalisation is undefined and ``tau`` is
    all zeros.
    """
    n = np.asarray(counts, dtype=np.float64)
    if n.ndim != 1 or n.size == 0:
        raise ValueError("counts must be a non-empty vector")
    if np.any(n <= 0) or not np.all(np.isfinite(n)):
        raise ValueError("class counts must be positive and finite")

    if strategy == "count":
        q = n.copy()
    elif strategy == "log":
        q = _share(np.log(n))
    elif strategy == "sqrt":
        q = _share(np.sqrt(n))
    elif strategy == "log-sqrt":
        q = _share(np.log(np.sqrt(n)))
    elif strategy == "linear":
        # evenly spaced in [0, 1] by frequency rank; tied counts share a rank
        q = (rankdata(n, method="average") - 1.0) / max(n.size - 1, 1)
    else:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    return ClassStats(q=q, tau=_minmax(q), strategy=strategy)


def _share(v: np.ndarray) -> np.ndarray:
    total = v.sum()
    return v / total if total > 0 else np.zeros_like(v)


def rarest_positive_tau(labels: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Per-video tau taken from its rarest positive class (smallest tau)."""
    labels = np.atleast_2d(labels)
    masked = np.where(labels > 0.5, tau[None, :], np.inf)
    out = masked.min(axis=1)
    if not np.all(np.isfinite(out)):
        raise ValueError("every video needs at least one positive label")
    return out


# ---------------------------------------------------------------------------
# head / medium / tail split
# ---------------------------------------------------------------------------


def group_split(counts: Sequence[float], head_frac: float = 0.2, tail_frac: float = 0.5) -> list[str]:
    """Assign each class to head, medium or tail by descending count.

    Ties keep ascending class order, so equal counts split by index.
    """
    if not (head_frac > 0 and tail_frac > 0 and head_frac + tail_frac <= 1 + 1e-12):
        raise ValueError("need head_frac > 0, tail_frac > 0 and head_frac + tail_frac <= 1")
    counts = np.asarray(counts, dtype=np.float64)
    s = counts.size
    order = sorted(range(s), key=lambda i: (-counts[i], i))
    n_head = int(math.floor(head_frac * s + 1e-9))
    n_tail = int(math.floor(tail_frac * s + 1e-9))
    groups = [MEDIUM] * s
    for rank, cls in enumerate(order):
        if rank < n_head:
            groups[cls] = HEAD
        elif rank >= s - n_tail:
            groups[cls] = TAIL
    return groups


# ---------------------------------------------------------------------------
# in-memory dataset
# ---------------------------------------------------------------------------


def default_video_id(index: int) -> str:
    return f"v{index:06d}"


@dataclass
class FeatureSequence:
    frames: np.ndarray
    video_id: str
    labels: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.labels = np.asarray(self.labels)
        if self.frames.ndim != 2 or min(self.frames.shape) < 1:
            raise ValueError(f"frames must be a non-empty T x C matrix, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError(f"{self.video_id}: non-finite frame features")
        if not np.any(self.labels == 1):
            raise ValueError(f"{self.video_id}: no positive label")


class VideoDataset:
    """A stack of equally shaped videos: frames ``[N,T,C]`` and labels ``[N,S]``."""

    def __init__(self, frames: np.ndarray, labels: np.ndarray, video_ids: Optional[Sequence[str]] = None):
        frames = np.asarray(frames)
        labels = np.asarray(labels)
        if frames.ndim != 3 or labels.ndim != 2 or frames.shape[0] != labels.shape[0]:
            raise ValueError(f"inconsistent dataset shapes {frames.shape} / {labels.shape}")
        self.frames = frames
        self.labels = labels
        if video_ids is None:
            video_ids = [default_video_id(i) for i in range(frames.shape[0])]
        if len(video_ids) != frames.shape[0]:
            raise ValueError("one video id per video is required")
        self.video_ids = list(video_ids)

    @classmethod
    def empty(cls, T: int, C: int, S: int) -> "VideoDataset":
        return cls(np.zeros((0, T, C), np.float32), np.zeros((0, S), np.float32), [])

    @classmethod
    def from_sequences(cls, videos: Sequence[FeatureSequence]) -> "VideoDataset":
        return cls(
            np.stack([v.frames for v in videos]),
            np.stack([v.labels for v in videos]),
            [v.video_id for v in videos],
        )

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i: int) -> FeatureSequence:
        return FeatureSequence(self.frames[i], self.video_ids[i], self.labels[i])

    def __iter__(self) -> Iterator[FeatureSequence]:
        for i in range(len(self)):
            yield self[i]

    @property
    def T(self) -> int:
        return self.frames.shape[1]

    @property
    def C(self) -> int:
        return self.frames.shape[2]

    @property
    def S(self) -> int:
        return self.labels.shape[1]

    def class_counts(self) -> np.ndarray:
        return (self.labels > 0.5).sum(axis=0).astype(np.int64)

    def subset(self, index: Sequence[int]) -> "VideoDataset":
        index = np.asarray(index, dtype=np.intp)
        return VideoDataset(self.frames[index], self.labels[index], [self.video_ids[i] for i in index])


# ---------------------------------------------------------------------------
# manifests (key=value text)
# ---------------------------------------------------------------------------


def format_kv(values: Mapping[str, object]) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class DatasetManifest:
    N: int
    S: int
    T: int
    C: int
    counts: list[int]
    groups: list[str]
    seed: int
    mu: float = 1.0
    profile: str = "geometric"
    extra: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.counts) != self.S or len(self.groups) != self.S:
            raise ValueError("counts and groups need one entry per class")
        bad = set(self.groups) - set(GROUPS)
        if bad:
            raise ValueError(f"unknown group names {sorted(bad)}")

    def to_text(self) -> str:
        body = {
            "N": self.N, "S": self.S, "T": self.T, "C": self.C, "seed": self.seed,
            "mu": float(self.mu), "profile": self.profile,
            "counts": [int(c) for c in self.counts], "groups": self.groups,
        }
        body.update(self.extra)
        return format_kv(body)

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        kv = parse_kv(text)
        try:
            core = dict(
                N=int(kv.pop("N")), S=int(kv.pop("S")), T=int(kv.pop("T")), C=int(kv.pop("C")),
                seed=int(kv.pop("seed")), mu=float(kv.pop("mu")), profile=kv.pop("profile"),
                counts=[int(c) for c in kv.pop("counts").split(",") if c],
                groups=[g for g in kv.pop("groups").split(",") if g],
            )
        except KeyError as exc:
            raise ValueError(f"manifest is missing key {exc.args[0]!r}") from exc
        return cls(**core, extra=kv)

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


def imbalanced_counts(S: int, n_max: int, mu: float) -> np.ndarray:
    """Geometric profile ``n_i = max(1, floor(n_max * mu**(i/(S-1))))``."""
    if not (0 < mu <= 1):
        raise ValueError(f"imbalance ratio must lie in (0, 1], got {mu}")
    if S < 2 or n_max < 1:
        raise ValueError("need S >= 2 and n_max >= 1")
    i = np.arange(S, dtype=np.float64)
    # the small slack keeps exact products such as 400 * 0.01 from flooring to 3
    raw = np.floor(n_max * mu ** (i / (S - 1)) + 1e-9)
    return np.maximum(raw, 1).astype(np.int64)


@dataclass
class SyntheticWorld:
    """Class-conditional frame distributions shared by the train and test splits."""

    class_means: np.ndarray
    background_means: np.ndarray
    background_frac: float

    @classmethod
    def create(cls, S: int, C: int, separation: float, rng: np.random.Generator,
               background_frac: float = 0.3, background_modes: int = 4,
               background_scale: Optional[float] = None) -> "SyntheticWorld":
        means = rng.standard_normal((S, C))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        bg = rng.standard_normal((background_modes, C))
        bg /= np.linalg.norm(bg, axis=1, keepdims=True)
        scale = separation if background_scale is None else background_scale
        return cls(means * separation, bg * scale, background_frac)

    def sample(self, counts: Sequence[int], T: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        S, C = self.class_means.shape
        counts = np.asarray(counts, dtype=np.int64)
        cls_of = np.repeat(np.arange(S), counts)
        n = cls_of.size
        noise = rng.standard_normal((n, T, C))
        is_bg = rng.random((n, T)) < self.background_frac
        scene = rng.integers(0, self.background_means.shape[0], size=n)
        centre = np.where(
            is_bg[:, :, None],
            self.background_means[scene][:, None, :],
            self.class_means[cls_of][:, None, :],
        )
        frames = (centre + noise).astype(np.float32)
        labels = np.zeros((n, S), dtype=np.float32)
        labels[np.arange(n), cls_of] = 1.0
        return frames, labels


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def generate_imbalanced_synthetic(
    S: int, n_max: int, mu: float, T: int, C: int, separation: float = 2.5, seed: int = 0,
    background_frac: float = 0.3, head_frac: float = 0.2, tail_frac: float = 0.5,
) -> tuple[VideoDataset, DatasetManifest]:
    train, _, manifest = generate_split(
        S, n_max, mu, T, C, separation, seed, test_per_class=0,
        background_frac=background_frac, head_frac=head_frac, tail_frac=tail_frac,
    )
    return train, manifest


def generate_split(
    S: int, n_max: int, mu: float, T: int, C: int, separation: float = 2.5, seed: int = 0,
    test_per_class: Optional[int] = None, background_frac: float = 0.3,
    head_frac: float = 0.2, tail_frac: float = 0.5,
) -> tuple[VideoDataset, VideoDataset, DatasetManifest]:
    """Long-tailed training split plus a class-balanced test split.

    The test split holds ``test_per_class`` videos per class (default 20% of
    ``n_max``) drawn from the same class distributions but an independent
    random stream, so the training counts follow the imbalance profile exactly.
    """
    if T < 1 or C < 2:
        raise ValueError("need T >= 1 and C >= 2")
    if separation <= 0:
        raise ValueError("separation must be positive")
    if not (0 <= background_frac < 1):
        raise ValueError("background_frac must lie in [0, 1)")
    counts = imbalanced_counts(S, n_max, mu)
    if test_per_class is None:
        test_per_class = max(1, int(round(0.2 * n_max)))
    world_rng, train_rng, test_rng = _streams(seed)
    world = SyntheticWorld.create(S, C, separation, world_rng, background_frac=background_frac)
    frames, labels = world.sample(counts, T, train_rng)
    train = VideoDataset(frames, labels)
    test_frames, test_labels = world.sample(np.full(S, test_per_class), T, test_rng)
    test = VideoDataset(test_frames, test_labels)
    manifest = DatasetManifest(
        N=len(train), S=S, T=T, C=C, counts=[int(c) for c in counts],
        groups=group_split(counts, head_frac, tail_frac), seed=seed, mu=mu,
        extra={
            "separation": repr(float(separation)),
            "background_frac": repr(float(background_frac)),
            "test_per_class": str(test_per_class),
        },
    )
    return train, test, manifest


# ---------------------------------------------------------------------------
# MVFT binary features
# ---------------------------------------------------------------------------


def encode_features(data: VideoDataset) -> bytes:
    n, T, C, S = len(data), data.T, data.C, data.S
    header = FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, T, C, S)
    body = np.concatenate(
        [data.frames.reshape(n, T * C).astype("<f4"), data.labels.astype("<f4")], axis=1
    )
    return header + body.tobytes()


def decode_features(buf: bytes) -> VideoDataset:
    r = Reader(buf)
    r.expect_magic(FEATURE_MAGIC)
    version = r.unpack("<I", "version")
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature-file version {version}", 4)
    n = r.unpack("<Q", "N")
    T, C, S = r.unpack("<III", "T, C, S")
    record = T * C + S
    available = (len(buf) - r.pos) // (4 * record) if record else n
    if available < n:
        raise FormatError(
            f"truncated: header declares {n} videos, record {available} is incomplete",
            r.pos + available * 4 * record,
        )
    values = r.floats(n * record, "records").reshape(n, record)
    r.expect_end()
    return VideoDataset(values[:, :T * C].reshape(n, T, C), values[:, T * C:])


def write_features(path, data: VideoDataset) -> None:
    Path(path).write_bytes(encode_features(data))


def read_features(path) -> VideoDataset:
    return decode_features(Path(path).read_bytes())
