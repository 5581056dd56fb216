"""Command-line front door: run experiments, query the accountant,
train/probe the denoiser.

Exit codes: 0 success, 1 runtime failure (message carries the failing
round), 2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

from .artifacts import write_pgm_grid
from .config import ConfigError, PRESETS, render_config, resolve_config
from .data import fixture_paths, load_labeled_set
from .denoiser import load_autoencoder, mismatch_probe, save_autoencoder, train_autoencoder
from .federated import RoundError, RunHooks, run_experiment
from .metrics import MetricsCsvWriter, format_round_record
from .privacy import DEFAULT_ORDERS, epsilon, rdp_subsampled_gaussian

__all__ = ["main"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedgan",
        description="Desk-scale differentially private federated GAN simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a federated training experiment")
    run.add_argument("config", nargs="?", default=None, help="config file path")
    run.add_argument(
        "--preset",
        choices=sorted(PRESETS),
        help="named base configuration applied before the config file",
    )
    run.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    run.add_argument(
        "--outdir", default=None, help="output directory (beats run.outdir and FEDGAN_OUT)"
    )

    acct = sub.add_parser("accountant", help="evaluate the privacy accountant")
    acct.add_argument("--q", type=float, required=True, help="sampling ratio m/N")
    acct.add_argument("--z", type=float, required=True, help="noise multiplier")
    acct.add_argument("--rounds", type=int, required=True)
    acct.add_argument("--delta", type=float, required=True)

    probe = sub.add_parser("probe-denoiser", help="per-level denoiser MSE table")
    probe.add_argument("model", help="saved autoencoder path")
    probe.add_argument("levels", nargs="*", type=float, help="noise levels to probe")
    probe.add_argument("--images", default=None, help="IDX image file (default: fixture held-out)")
    probe.add_argument("--labels", default=None, help="IDX label file (default: fixture held-out)")
    probe.add_argument("--seed", type=int, default=0)

    train = sub.add_parser("train-autoencoder", help="train and save the denoiser")
    train.add_argument("--out", required=True, help="output model path")
    train.add_argument("--level", type=float, default=0.2)
    train.add_argument("--epochs", type=int, default=20)
    train.add_argument("--batch", type=int, default=32)
    train.add_argument("--lr", type=float, default=2e-3)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--images", default=None, help="IDX image file (default: fixture held-out)")
    train.add_argument("--labels", default=None, help="IDX label file (default: fixture held-out)")
    return parser


def _load_probe_set(images_path, labels_path):
    defaults = fixture_paths()
    return load_labeled_set(
        images_path or defaults["heldout_images"],
        labels_path or defaults["heldout_labels"],
    )


def _cmd_run(args) -> int:
    try:
        cfg = resolve_config(args.config, args.preset, args.overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(
        args.outdir or cfg.outdir or os.environ.get("FEDGAN_OUT") or "out"
    )
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config_resolved").write_text(render_config(cfg))

    writer = MetricsCsvWriter(outdir / "metrics.csv")

    def on_record(rec):
        writer.write(rec)
        print(format_round_record(rec))

    def on_samples(round_index, images):
        write_pgm_grid(images, outdir / f"samples_round_{round_index}.pgm")

    try:
        run_experiment(cfg, hooks=RunHooks(on_record=on_record, on_samples=on_samples))
    except RoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        writer.close()
    print(f"artifacts written to {outdir}")
    return EXIT_OK


def _cmd_accountant(args) -> int:
    try:
        if args.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if args.rounds == 0:
            eps, order = 0.0, math.inf
        else:
            curve = rdp_subsampled_gaussian(args.q, args.z, DEFAULT_ORDERS)
            eps, order = epsilon(curve, args.rounds, args.delta)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"epsilon={eps:.6g} order={order:g}")
    return EXIT_OK


def _cmd_probe_denoiser(args) -> int:
    try:
        model = load_autoencoder(args.model)
        dataset = _load_probe_set(args.images, args.labels)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("level,mse_noisy,mse_denoised")
    for result in mismatch_probe(model, dataset.images, args.levels, seed=args.seed):
        print(f"{result.level:g},{result.mse_noisy:.6g},{result.mse_denoised:.6g}")
    return EXIT_OK


def _cmd_train_autoencoder(args) -> int:
    try:
        dataset = _load_probe_set(args.images, args.labels)
        model = train_autoencoder(
            dataset,
            noise_level=args.level,
            epochs=args.epochs,
            batch=args.batch,
            seed=args.seed,
            lr=args.lr,
        )
        save_autoencoder(model, args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    last = model.train_losses[-1] if model.train_losses else float("nan")
    print(
        f"trained at level {model.trained_noise_level:g} for {args.epochs} epochs "
        f"(final loss {last:.6g}); saved to {args.out}"
    )
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "accountant":
        return _cmd_accountant(args)
    if args.command == "probe-denoiser":
        return _cmd_probe_denoiser(args)
    if args.command == "train-autoencoder":
        return _cmd_train_autoencoder(args)
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
