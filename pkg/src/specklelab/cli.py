"""Command-line orchestration for the full experiment lifecycle.

Subcommands: simulate, stats, train, evaluate, export-pgm, verify.
Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import ConfigError, DataError, NumericError
from .frameio import read_frame, write_pgm
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.network import default_model
from .nn.training import (
    evaluate as evaluate_split,
    read_history_csv,
    train as train_model,
    write_history_csv,
)
from .pipeline import MANIFEST_NAME, DatasetManifest, generate_dataset, verify_dataset
from .stats import (
    fit_exponential,
    histogram,
    temporal_crosscorr,
    write_correlation_csv,
    write_exceedance_csv,
    write_histogram_csv,
    exceedance,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(args) -> config_mod.ExperimentConfig:
    cfg = config_mod.load_config(args.config) if args.config else config_mod.desk_config()
    if getattr(args, "seed", None) is not None:
        cfg = config_mod.with_overrides(cfg, seed=args.seed)
    return cfg


def _require_new_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise ConfigError(f"output directory {path} is not empty (use --force to overwrite)")


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _require_new_dir(out, args.force)
    protocol = cfg.protocol(args.protocol)
    manifest = generate_dataset(
        cfg.suspension_templates(),
        protocol,
        cfg.counts(),
        cfg.optics,
        cfg.seed,
        out,
        background_window=cfg.dataset.background_window,
        background_mode=cfg.dataset.background_mode,
        jitter=cfg.suspension.lot_jitter,
    )
    by_split = {s: sum(1 for e in manifest.entries if e.split == s) for s in ("train", "val", "test", "independent")}
    print(f"dataset: {out}")
    print(f"protocol: {protocol.tag}  classes: {','.join(manifest.classes)}  frames: {len(manifest.entries)}")
    print("splits: " + "  ".join(f"{k}={v}" for k, v in by_split.items()))
    return EXIT_OK


def _read_manifest(dataset: str) -> DatasetManifest:
    path = Path(dataset) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    return DatasetManifest.read(path)


def cmd_stats(args) -> int:
    manifest = _read_manifest(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wanted = args.classes.split(",") if args.classes else list(manifest.classes)
    root = Path(args.dataset)

    selected = [e for e in manifest.entries if e.class_label in wanted]
    if not selected:
        raise DataError(f"selection {wanted} matches no frames")

    summary_lines = ["class,frames,mean,contrast,ks,mode_bin"]
    for label in wanted:
        entries = [e for e in selected if e.class_label == label][: args.frames]
        if not entries:
            raise DataError(f"class {label!r} matches no frames")
        hist_total = None
        values = []
        for e in entries:
            pixels = read_frame(root / e.path)
            h = histogram(pixels, n_bins=64)
            hist_total = h.counts if hist_total is None else hist_total + h.counts
            values.append(np.asarray(pixels, dtype=float).ravel())
        pooled = np.concatenate(values)
        stats = fit_exponential(pooled)
        write_histogram_csv(out / f"histogram_{label}.csv", histogram(pooled, n_bins=64))
        thresholds = np.linspace(0.0, 3.0 * stats.mean_intensity, 31)
        write_exceedance_csv(out / f"exceedance_{label}.csv", thresholds, exceedance(pooled, thresholds))
        summary_lines.append(
            f"{label},{len(entries)},{stats.mean_intensity:.9g},{stats.contrast:.9g},"
            f"{stats.ks_statistic:.9g},{stats.mode_bin}"
        )

        # temporal correlation of this class's first movie
        first = entries[0]
        movie_entries = [
            e
            for e in manifest.entries
            if (e.class_label, e.lot, e.version, e.location) == (first.class_label, first.lot, first.version, first.location)
        ]
        movie_entries.sort(key=lambda e: e.frame)
        max_lag = min(args.max_lag, len(movie_entries) - 1)
        stack = np.stack([read_frame(root / e.path) for e in movie_entries[: max_lag + 1]])
        write_correlation_csv(out / f"correlation_{label}.csv", temporal_crosscorr(stack, max_lag))

    (out / "summary.csv").write_text("\n".join(summary_lines) + "\n")
    print(f"stats written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    manifest = _read_manifest(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    training = cfg.training
    if args.optimizer:
        training = config_mod.replace(training, optimizer=args.optimizer)
    if args.bn_finalize:
        training = config_mod.replace(training, bn_finalize=args.bn_finalize.replace("-", "_"))
    if args.epochs is not None:
        training = config_mod.replace(training, epochs=args.epochs)
    if args.seed is not None:
        training = config_mod.replace(training, seed=args.seed)

    history_path = out / "history.csv"
    checkpoint_path = out / "model.spnn"

    if args.resume:
        model, optimizer_state, meta = load_checkpoint(args.resume)
        if set(model.class_labels) != set(manifest.classes):
            raise ConfigError("checkpoint class set does not match the dataset")
        if args.optimizer and args.optimizer != _state_kind(optimizer_state):
            optimizer_state = None  # switching optimizers starts fresh state
        prior = read_history_csv(history_path) if history_path.exists() else []
        start_step = meta["step"]
        start_epoch = meta["epoch"]
    else:
        first = manifest.entries[0]
        sample = read_frame(Path(args.dataset) / first.path)
        model = default_model(manifest.classes, input_hw=sample.shape, seed=training.seed)
        optimizer_state = None
        prior = []
        start_step = 0
        start_epoch = 0

    model, history = train_model(
        model, manifest, training, optimizer_state=optimizer_state,
        initial_step=start_step, initial_epoch=start_epoch,
    )
    full_history = prior + history
    write_history_csv(history_path, full_history)
    save_checkpoint(
        checkpoint_path, model, optimizer_state=None,
        step=full_history[-1].step if full_history else start_step,
        epoch=start_epoch + training.epochs,
    )

    for split in ("val", "test"):
        matrix = evaluate_split(model, manifest, split)
        print(f"{split} accuracy: {matrix.accuracy:.4f}")
    print(f"checkpoint: {checkpoint_path}")
    print(f"history: {history_path}")
    return EXIT_OK


def _state_kind(state) -> str:
    from .nn.optim import AdamState

    return "adam" if isinstance(state, AdamState) else "sgdm"


def cmd_evaluate(args) -> int:
    manifest = _read_manifest(args.dataset)
    model, _, _ = load_checkpoint(args.checkpoint)
    if set(model.class_labels) != set(manifest.classes):
        raise ConfigError(
            f"class set mismatch: model {model.class_labels} vs dataset {manifest.classes}"
        )
    if args.split == "independent":
        leaked = [
            e.path for e in manifest.entries if e.version >= 2 and e.split in ("train", "val", "test")
        ]
        if leaked:
            raise DataError(f"version-2 frames leaked into training splits: {leaked[:3]}")
    matrix = evaluate_split(model, manifest, args.split)
    out = Path(args.out) if args.out else Path(args.dataset) / f"confusion_{args.split}.csv"
    matrix.to_csv(out)
    print(f"{args.split} accuracy: {matrix.accuracy:.4f}")
    print(f"confusion matrix: {out}")
    return EXIT_OK


def cmd_export_pgm(args) -> int:
    manifest = _read_manifest(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = manifest.entries[: args.limit] if args.limit else manifest.entries
    if not entries:
        raise DataError("dataset has no frames")
    for e in entries:
        pixels = read_frame(Path(args.dataset) / e.path)
        name = e.path.replace("/", "_").removesuffix(".spkl") + ".pgm"
        write_pgm(out / name, pixels)
    print(f"exported {len(entries)} frames to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    problems = verify_dataset(args.dataset)
    if problems:
        for p in problems:
            print(f"PROBLEM: {p}")
        raise DataError(f"{len(problems)} problems found")
    print("dataset OK")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="specklelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a speckle dataset")
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--protocol", choices=["A", "B", "C", "D"], default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stats", help="emit histogram/exceedance/correlation CSVs")
    p.add_argument("--dataset", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--classes", type=str, default=None, help="comma-separated class filter")
    p.add_argument("--frames", type=int, default=200, help="frames per class for pooled stats")
    p.add_argument("--max-lag", type=int, default=30)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train the classifier on a dataset")
    p.add_argument("--dataset", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--optimizer", choices=["adam", "sgdm"], default=None)
    p.add_argument("--bn-finalize", choices=["population", "moving-average"], default=None)
    p.add_argument("--resume", type=str, default=None, metavar="CKPT")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="confusion matrix and accuracy for a split")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--dataset", type=str, required=True)
    p.add_argument("--split", choices=["train", "val", "test", "independent"], default="test")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-pgm", help="convert frames to 16-bit PGM")
    p.add_argument("--dataset", type=str, required=True)
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_export_pgm)

    p = sub.add_parser("verify", help="run the dataset invariant suite")
    p.add_argument("--dataset", type=str, required=True)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
