"""Command-line entry point: ``subspace-sr <command> [options]``.

Exit codes: 0 success, 1 training aborted on a non-finite loss, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import config as cfgmod
from .curriculum import describe, schedule_csv
from .data import (
    build_triples,
    load_split,
    read_image,
    read_manifest,
    synth_corpus,
    write_corpus,
    write_image,
)
from .evaluation import (
    RegionPartition,
    plot_training_log,
    read_external_scores,
    sweep,
)
from .pca import (
    energy_dimension,
    fit_pca,
    load_basis,
    montage_projections,
)
from .trainer import (
    ConfigError,
    TrainingAborted,
    deterministic_mode,
    pretrain,
    read_log,
    resume,
    train_adversarial,
)

log = logging.getLogger("subspace_sr")


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="random seed (sets train.seed)")
    p.add_argument("--deterministic", dest="deterministic", action="store_true",
                   default=None, help="single-threaded, bit-stable execution")
    p.add_argument("--no-deterministic", dest="deterministic", action="store_false")
    p.add_argument("--strict-decode", action="store_true", default=None,
                   help="fail on undecodable images instead of skipping them")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI run configuration file")
    group = p.add_argument_group(
        "config keys", "override any key of the configuration file (flags win)")
    for section, key, kind, default in cfgmod.iter_keys():
        if isinstance(default, tuple):
            default = ",".join(repr(v) for v in default)
        name = getattr(kind, "__name__", str(kind))
        group.add_argument(f"--{section}.{key}", dest=f"cfg:{section}:{key}",
                           metavar=name.upper(), help=f"default: {default!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subspace-sr",
        description="Incremental PCA-subspace discrimination for face super-resolution.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="write a synthetic face-like corpus")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--count", type=int, default=220)
    p.add_argument("--val-count", type=int, default=20)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--channels", type=int, default=3)
    _add_common(p)

    p = sub.add_parser("fit-pca", help="fit the PCA basis of a corpus")
    p.add_argument("--corpus", type=Path, required=True,
                   help="manifest file or image directory")
    p.add_argument("--out", type=Path, required=True, help="basis file to write")
    p.add_argument("--rank-cap", type=int)
    p.add_argument("--split", default="train")
    p.add_argument("--top", type=int, default=10, help="spectrum summary length")
    _add_common(p)

    p = sub.add_parser("montage", help="projections at increasing energy fractions")
    p.add_argument("--basis", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--fractions", default="0,0.5,0.9,0.99,1.0",
                   help="comma-separated ascending fractions in [0, 1]")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--zoom", type=int, default=4)
    _add_common(p)

    p = sub.add_parser("schedule", help="print the per-epoch curriculum table")
    p.add_argument("--basis", type=Path, help="basis file (else paths.basis)")
    p.add_argument("--out", type=Path, help="write CSV here instead of stdout")
    _add_config(p)
    _add_common(p)

    p = sub.add_parser("pretrain", help="L1 pretraining of the generator")
    _add_config(p)
    _add_common(p)

    p = sub.add_parser("train", help="curriculum adversarial training")
    p.add_argument("--resume", type=Path, help="continue from this checkpoint")
    p.add_argument("--stop-after", type=int, help="stop after this epoch")
    _add_config(p)
    _add_common(p)

    p = sub.add_parser("eval", help="RMSE/PSNR sweep over checkpoints")
    p.add_argument("--checkpoints", nargs="+", required=True,
                   help="checkpoint files, or 'oracle' / 'bicubic'")
    p.add_argument("--split", default="val")
    p.add_argument("--out", type=Path, help="CSV output path")
    _add_config(p)
    _add_common(p)
    return parser


def _run_config(args) -> cfgmod.RunConfig:
    overrides: dict[str, dict[str, str]] = {}
    for dest, value in vars(args).items():
        if dest.startswith("cfg:") and value is not None:
            _, section, key = dest.split(":")
            overrides.setdefault(section, {})[key] = value
    train = overrides.setdefault("train", {})
    if args.seed is not None:
        train["seed"] = str(args.seed)
    if args.deterministic is not None:
        train["deterministic"] = str(args.deterministic)
    if args.strict_decode:
        train["strict_decode"] = "true"
    return cfgmod.load(args.config, overrides)


def _parse_fractions(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"malformed fraction list {text!r}") from None
    if not values or any(not 0.0 <= v <= 1.0 for v in values):
        raise UsageError(f"fractions must lie in [0, 1]: {text!r}")
    if any(b < a for a, b in zip(values, values[1:])):
        raise UsageError(f"fractions must be ascending: {text!r}")
    return values


def cmd_synth_corpus(args) -> int:
    manifest, _ = synth_corpus(args.count, (args.channels, args.size, args.size),
                               seed=args.seed or 0, val_count=args.val_count)
    path = write_corpus(manifest, args.out_dir)
    print(f"wrote {len(manifest.ids)} images and {path}")
    return 0


def cmd_fit_pca(args) -> int:
    manifest = read_manifest(args.corpus)
    _, images = load_split(manifest, args.split, strict=bool(args.strict_decode))
    basis = fit_pca(images, rank_cap=args.rank_cap)
    basis.save(args.out)
    print(f"basis: d={basis.dim} r={basis.rank} m={basis.corpus_size} "
          f"shape={basis.image_shape} -> {args.out}")
    if basis.rank:
        for k in range(1, min(args.top, basis.rank) + 1):
            print(f"top-{k} energy {basis.energy_fraction(k):.6f}")
    return 0


def cmd_montage(args) -> int:
    fractions = _parse_fractions(args.fractions)
    basis = load_basis(args.basis)
    image = read_image(args.image, channels=basis.image_shape[0])
    if tuple(image.shape) != tuple(basis.image_shape):
        raise UsageError(f"image shape {image.shape} != basis shape {basis.image_shape}")
    tiles = montage_projections(basis, image.reshape(-1), fractions)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    zoom = max(1, args.zoom)
    labelled = []
    for f, tile in zip(fractions, tiles):
        n = energy_dimension(basis, f)
        energy = basis.energy_fraction(n)
        err = float(np.linalg.norm(tile.reshape(-1) - image.reshape(-1)))
        write_image(args.out_dir / f"proj_{f:.4f}.png", tile)
        print(f"fraction={f:g} n={n} energy={energy:.4f} l2_error={err:.6f}")
        big = np.kron(tile, np.ones((1, zoom, zoom)))
        arr = np.round(np.clip(big, 0, 1) * 255).astype(np.uint8)
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
        im = Image.fromarray(arr).convert("RGB")
        canvas = Image.new("RGB", (im.width, im.height + 24), "white")
        canvas.paste(im, (0, 24))
        ImageDraw.Draw(canvas).text((2, 1), f"n={n}\n{100 * energy:.1f}%", fill="black")
        labelled.append(canvas)
    strip = Image.new("RGB", (sum(c.width for c in labelled), labelled[0].height), "white")
    x = 0
    for c in labelled:
        strip.paste(c, (x, 0))
        x += c.width
    strip.save(args.out_dir / "strip.png")
    return 0


def _basis_path(args, run: cfgmod.RunConfig) -> Path:
    path = getattr(args, "basis", None) or run.training.paths.basis
    if not path:
        raise ConfigError("paths.basis is not set")
    if not Path(path).exists():
        raise ConfigError(f"paths.basis does not exist: {path}")
    return Path(path)


def cmd_schedule(args) -> int:
    run = _run_config(args)
    basis = load_basis(_basis_path(args, run))
    text = schedule_csv(describe(run.training.curriculum, basis))
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_pretrain(args) -> int:
    run = _run_config(args)
    path = pretrain(run.training)
    print(f"pretrained generator -> {path}")
    return 0


def cmd_train(args) -> int:
    run = _run_config(args)
    cfg = run.training
    if args.resume:
        result = resume(args.resume, cfg, stop_after=args.stop_after)
    else:
        _basis_path(args, run)
        result = train_adversarial(cfg, stop_after=args.stop_after)
    rows = [r for r in read_log(result.log_path) if r["phase"] == "adversarial"]
    if rows:
        plot_training_log(rows, Path(cfg.paths.output_dir) / "curves.png")
    print(f"checkpoint -> {result.checkpoint}")
    print(f"log -> {result.log_path}")
    return 0


def cmd_eval(args) -> int:
    run = _run_config(args)
    cfg, ev = run.training, run.eval
    if not cfg.paths.corpus:
        raise ConfigError("paths.corpus is not set")
    manifest = read_manifest(cfg.paths.corpus)
    _, hr = load_split(manifest, args.split, strict=cfg.train.strict_decode)
    triples = build_triples(hr, cfg.generator.scale_factor)
    scores = read_external_scores(ev.external_scores) if ev.external_scores else None
    result = sweep(args.checkpoints, triples, RegionPartition(ev.boundaries),
                   scores, ev.mode, ev.border_crop)
    if args.out:
        result.write_csv(args.out)
    print(",".join(("checkpoint", "mean_rmse", "mean_psnr", "region", "external_score")))
    for row in result.rows():
        print(",".join(str(v) for v in row.values()))
    for region, rep in sorted(result.best_rmse.items()):
        print(f"# region {region}: lowest RMSE {rep.mean_rmse:.4f} ({rep.checkpoint})")
    return 0


COMMANDS = {
    "synth-corpus": cmd_synth_corpus,
    "fit-pca": cmd_fit_pca,
    "montage": cmd_montage,
    "schedule": cmd_schedule,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with deterministic_mode(bool(args.deterministic)):
            return COMMANDS[args.command](args)
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc} (last good checkpoint: "
              f"{exc.checkpoint})", file=sys.stderr)
        return 1
    except (UsageError, ValueError, FileNotFoundError) as exc:
        # config, corpus and spectrum errors are all ValueError subclasses
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
