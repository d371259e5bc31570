"""Command-line entry points.

Exit codes: 0 ok, 2 usage/config, 3 I/O or file format, 4 numeric failure.
``MOVE_THREADS`` caps the number of worker processes ``ablate`` may use.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dfs
from .aggregators import assignment_csv_rows, attention_csv_rows, attention_scores, cluster_assignments
from .binio import FormatError
from .dataset import (
    DatasetManifest,
    compute_tail_criterion,
    format_kv,
    generate_split,
    rarest_positive_tau,
    read_features,
    write_features,
)
from .evaluation import confidence_gap, evaluate
from .model import ConfigError
from .trainer import NonFiniteLossError, TrainConfig, load_model, save_model, train

logger = logging.getLogger("move_vlt")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

ABLATION_GRID = (
    ("d", False, False),
    ("e", True, False),
    ("f", False, True),
    ("g", True, True),
)


class DataDir:
    """``train.mvft``, ``test.mvft`` and ``manifest.txt`` under one directory."""

    def __init__(self, path):
        self.path = Path(path)
        self.manifest = DatasetManifest.read(self.path / "manifest.txt")
        self.train = read_features(self.path / "train.mvft")
        test = self.path / "test.mvft"
        self.test = read_features(test) if test.exists() else None


def _write_run(out: Path, command: str, args: argparse.Namespace, config: Optional[TrainConfig] = None) -> None:
    values = {"command": command}
    values.update({k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command") and v is not None})
    text = format_kv(values)
    if config is not None:
        text += config.to_text()
    (out / "run.txt").write_text(text, encoding="utf-8")


def _resolve_config(args) -> TrainConfig:
    base = TrainConfig.desk() if args.preset == "desk" else TrainConfig()
    if args.config:
        base = TrainConfig.from_text(Path(args.config).read_text(encoding="utf-8"), base)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "no_move", False):
        overrides["move_enabled"] = "false"
    if getattr(args, "no_extrapolation", False):
        overrides["extrapolation_enabled"] = "false"
    if getattr(args, "no_interpolation", False):
        overrides["interpolation_enabled"] = "false"
    return TrainConfig.from_mapping(overrides, base) if overrides else base


# -- commands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    train_set, test_set, manifest = generate_split(
        args.classes, args.nmax, args.mu, args.frames, args.dim, separation=args.sep, seed=args.seed,
        test_per_class=args.test_per_class, background_frac=args.background_frac,
        head_frac=args.head_frac, tail_frac=args.tail_frac,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_features(out / "train.mvft", train_set)
    write_features(out / "test.mvft", test_set)
    manifest.write(out / "manifest.txt")
    _write_run(out, "gen-data", args)
    print(f"wrote {len(train_set)} train / {len(test_set)} test videos to {out}")
    return EXIT_OK


def _train_one(data: DataDir, config: TrainConfig, out: Path) -> dict:
    result = train(data.train, config, data.test, data.manifest.groups)
    save_model(out, result, config)
    (out / "metrics.csv").write_text(result.metrics_csv(), encoding="utf-8")
    return result.history[-1] if result.history else {}


def cmd_train(args) -> int:
    config = _resolve_config(args)
    data = DataDir(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run(out, "train", args, config)
    last = _train_one(data, config, out)
    if last:
        print(f"final epoch {last['epoch']}: loss {last['loss']:.5f} mAP {last['mAP_all']:.4f}")
    return EXIT_OK


def _ablation_cell(data_path: str, config_text: str, out: str) -> tuple[dict, Optional[str]]:
    config = TrainConfig.from_text(config_text)
    try:
        return _train_one(DataDir(data_path), config, Path(out)), None
    except (NonFiniteLossError, ValueError, OSError) as exc:
        return {}, f"{type(exc).__name__}: {exc}"


def cmd_ablate(args) -> int:
    if args.grid != "default":
        raise ConfigError(f"unknown ablation grid {args.grid!r}")
    base = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run(out, "ablate", args, base)
    DataDir(args.data)  # fail early on unreadable data
    cells = []
    for row, ex, inter in ABLATION_GRID:
        cfg = TrainConfig.from_mapping(
            {"move_enabled": "true", "extrapolation_enabled": str(ex).lower(),
             "interpolation_enabled": str(inter).lower()},
            base,
        )
        if not (ex or inter):
            cfg = TrainConfig.from_mapping({"move_enabled": "false"}, cfg)
        cell_out = out / f"row_{row}"
        cell_out.mkdir(exist_ok=True)
        cells.append((row, ex, inter, cfg, cell_out))

    workers = max(1, int(os.environ.get("MOVE_THREADS", "1")))
    jobs = [(str(args.data), cfg.to_text(), str(cell_out)) for _, _, _, cfg, cell_out in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outcomes = list(pool.map(_ablation_cell, *zip(*jobs)))
    else:
        outcomes = [_ablation_cell(*job) for job in jobs]

    cols = ["row", "extrapolation", "interpolation", "config_hash", "status",
            "mAP_all", "mAP_head", "mAP_medium", "mAP_tail", "top1", "top5"]
    lines = [",".join(cols)]
    for (row, ex, inter, cfg, _), (last, err) in zip(cells, outcomes):
        if err:
            logger.error("ablation row %s failed: %s", row, err)
        metrics = [repr(float(last[c])) if last else "nan" for c in cols[5:]]
        status = "ok" if not err else "failed"
        lines.append(",".join([row, str(ex).lower(), str(inter).lower(), cfg.config_hash(), status] + metrics))
    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print((out / "ablation.csv").read_text(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    data = DataDir(args.data)
    model, _ = load_model(args.model)
    split = data.test if args.split == "test" else data.train
    if split is None:
        raise ConfigError(f"no {args.split} split in {args.data}")
    report = evaluate(split, model, data.manifest.groups)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run(out, "eval", args)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "per_class.csv").write_text(report.per_class_csv(data.manifest.counts), encoding="utf-8")
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_diag_attention(args) -> int:
    data = DataDir(args.data)
    model, config = load_model(args.model)
    if model.psa is None:
        raise ConfigError("attention diagnostics need the aggregator model, not meanpool")
    split = data.test if args.split == "test" and data.test is not None else data.train
    if args.limit:
        split = split.subset(range(min(args.limit, len(split))))
    frames = split.frames.astype(np.float64)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run(out, "diag-attention", args)
    scores = attention_scores(frames, None, model.psa)
    rho = cluster_assignments(frames, model.codebook)
    (out / "attention.csv").write_text(
        "\n".join(["video_id,frame,head,score"] + attention_csv_rows(split.video_ids, scores)) + "\n")
    (out / "assignments.csv").write_text(
        "\n".join(["video_id,frame,cluster,rho"] + assignment_csv_rows(split.video_ids, rho)) + "\n")
    tau = compute_tail_criterion(data.train.class_counts(), config.criterion).tau
    rng = np.random.default_rng(config.seed if args.seed is None else args.seed)
    masks, _ = dfs.sample_batch(rarest_positive_tau(split.labels, tau), split.T, config.sigma, rng)
    (out / "masks.csv").write_text(
        "\n".join(["video_id,bits"] + dfs.masks_to_csv_rows(split.video_ids, masks)) + "\n")
    print(f"wrote attention, assignment and mask dumps for {len(split)} videos to {out}")
    return EXIT_OK


def cmd_diag_confidence(args) -> int:
    data = DataDir(args.data)
    model, config = load_model(args.model)
    split = data.test if args.split == "test" and data.test is not None else data.train
    tau = compute_tail_criterion(data.train.class_counts(), config.criterion).tau
    rng = np.random.default_rng(config.seed if args.seed is None else args.seed)
    gap = confidence_gap(split, model, args.draws, rng, alpha=config.alpha, tau=tau)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run(out, "diag-confidence", args)
    (out / "confidence.csv").write_text(gap.to_csv(), encoding="utf-8")
    groups = data.manifest.groups
    print("normalized_diff head/medium/tail: "
          + " / ".join(f"{gap.group_mean(groups, g):.4f}" for g in ("head", "medium", "tail")))
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="move-vlt", description="Long-tailed video feature classification")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic long-tailed feature dataset")
    g.add_argument("--classes", type=int, default=20)
    g.add_argument("--nmax", type=int, default=60)
    g.add_argument("--mu", type=float, default=0.01)
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--sep", type=float, default=2.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--test-per-class", type=int, default=None)
    g.add_argument("--background-frac", type=float, default=0.3)
    g.add_argument("--head-frac", type=float, default=0.2)
    g.add_argument("--tail-frac", type=float, default=0.5)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    def training_flags(sp):
        sp.add_argument("--data", required=True)
        sp.add_argument("--config", default=None, help="key=value file overriding the preset")
        sp.add_argument("--preset", choices=("desk", "full"), default="desk",
                        help="desk: 30 epochs, K=8, D_p=16; full: 100 epochs, K=64, D_p=512")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train aggregators and classifier")
    training_flags(t)
    abl = t.add_mutually_exclusive_group()
    abl.add_argument("--no-move", action="store_true")
    abl.add_argument("--no-extrapolation", action="store_true")
    abl.add_argument("--no-interpolation", action="store_true")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="run the extrapolation/interpolation switch grid")
    training_flags(a)
    a.add_argument("--grid", default="default")
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="grouped mAP and top-k accuracy of a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True, help="directory holding model.movp and config.txt")
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    da = sub.add_parser("diag-attention", help="dump attention scores, cluster assignments and frame masks")
    da.add_argument("--data", required=True)
    da.add_argument("--model", required=True)
    da.add_argument("--split", choices=("test", "train"), default="test")
    da.add_argument("--limit", type=int, default=0)
    da.add_argument("--seed", type=int, default=None)
    da.add_argument("--out", required=True)
    da.set_defaults(func=cmd_diag_attention)

    dc = sub.add_parser("diag-confidence", help="original vs interpolated confidence per class")
    dc.add_argument("--data", required=True)
    dc.add_argument("--model", required=True)
    dc.add_argument("--split", choices=("test", "train"), default="test")
    dc.add_argument("--draws", type=int, default=500)
    dc.add_argument("--seed", type=int, default=None)
    dc.add_argument("--out", required=True)
    dc.set_defaults(func=cmd_diag_confidence)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
