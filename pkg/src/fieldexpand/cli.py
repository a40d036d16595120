"""Command-line pipeline: prepare, train, expand, sample, extract, probe, fid.

Exit codes: 0 success, 2 config/validation error, 3 runtime abort
(non-finite loss), 4 I/O error. Every command validates its inputs before
touching the filesystem.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as datakit
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .data import Manifest, TileRecord
from .evaluation import (
    EncoderFeatures,
    channel_stats_features,
    decode_latent_samples,
    export_embeddings,
    fid_expanded,
    fid_sampled,
    load_embeddings,
    probe_feature_sets,
)
from .models import ExpansionModel
from .probe import evaluate_probe, train_probe
from .training import Trainer, TrainingAborted

log = logging.getLogger("fieldexpand")


def restore_model(ckpt: Checkpoint) -> tuple[ExpansionModel, ExperimentConfig]:
    """Rebuild a model (weights only) from a checkpoint archive."""
    config = ExperimentConfig.from_dict(ckpt.config)
    model = ExpansionModel(config.model, config.num_stages())
    model.grow_to(ckpt.stage)
    params = model.named_parameters()
    with torch.no_grad():
        for name, param in params.items():
            key = f"model.{name}"
            if key not in ckpt.tensors:
                raise CheckpointError(f"checkpoint is missing tensor {key}")
            param.copy_(torch.from_numpy(ckpt.tensors[key]))
    for net in model.networks().values():
        net.eval()
    return model, config


# ---------------------------------------------------------------------------
# prepare

def _patient_of(rel_path: Path) -> str:
    if len(rel_path.parts) > 1:
        return rel_path.parts[0]
    stem = rel_path.stem
    return stem.split("_", 1)[0]


def cmd_prepare(args: argparse.Namespace) -> int:
    tile_dir = Path(args.tile_dir)
    if not tile_dir.is_dir():
        raise ConfigError(f"tile directory not found: {tile_dir}")
    mask_dir = Path(args.masks) if args.masks else None
    if mask_dir is not None and not mask_dir.is_dir():
        raise ConfigError(f"mask directory not found: {mask_dir}")
    ratios = tuple(float(r) for r in args.ratios.split(","))
    if len(ratios) != 3:
        raise ConfigError("--ratios must be train,val,test")
    out_path = Path(args.out)

    paths = sorted(tile_dir.rglob("*.png"), key=lambda p: p.relative_to(tile_dir).as_posix())
    if not paths:
        raise ConfigError(f"no PNG tiles under {tile_dir}")

    records: list[TileRecord] = []
    skipped_unreadable = 0
    discarded_background = 0
    tile_size = None
    central_size = args.central_size
    for path in paths:
        rel = path.relative_to(tile_dir)
        try:
            img = datakit.load_image_tensor(path)
        except OSError:
            skipped_unreadable += 1
            continue
        if tile_size is None:
            tile_size = img.shape[1]
            if central_size is None:
                central_size = tile_size // 2
                central_size -= (central_size - tile_size) % 2
        fraction = float(datakit.compute_tissue_mask(img).mean())
        if fraction < 0.5:
            discarded_background += 1
            continue
        label = None
        if mask_dir is not None:
            mask_path = mask_dir / rel
            if mask_path.exists():
                mask = datakit.load_mask(mask_path)
                label = int(datakit.label_tile(mask, central_size))
        records.append(
            TileRecord(
                image_path=str(path),
                patient_id=_patient_of(rel),
                label=label,
                split="",
                tissue_fraction=fraction,
            )
        )
    if skipped_unreadable:
        log.info("skipped %d unreadable images", skipped_unreadable)
    if discarded_background:
        log.info("discarded %d tiles with under 50%% tissue", discarded_background)
    if not records:
        raise ConfigError("no tiles retained after the tissue filter")

    if args.balance:
        before = len(records)
        records = datakit.downsample_to_balance(records, args.seed)
        log.info("balanced classes: %d -> %d tiles", before, len(records))

    class_names = ["normal", "tumor"] if mask_dir is not None else []
    manifest = datakit.split_by_patient(
        records,
        ratios,
        args.seed,
        class_names=class_names,
        tile_size=tile_size,
        central_size=central_size,
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rel_records = [
        TileRecord(
            image_path=_relative_to(out_path.parent, r.image_path),
            patient_id=r.patient_id,
            label=r.label,
            split=r.split,
            tissue_fraction=r.tissue_fraction,
        )
        for r in manifest.records
    ]
    manifest.records = rel_records
    manifest.save(out_path)
    log.info("wrote %d records to %s", len(manifest.records), out_path)
    return 0


def _relative_to(base: Path, target: str) -> str:
    try:
        return Path(target).resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        import os

        return Path(os.path.relpath(target, base)).as_posix()


# ---------------------------------------------------------------------------
# train

def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.override)
    if args.seed is not None:
        config.train.seed = args.seed
        config.validate()
    manifest = Manifest.load(config.manifest)
    out_dir = Path(args.out_dir)

    if args.resume:
        ckpt = load_checkpoint(args.resume)
        trainer = Trainer.from_checkpoint(ckpt, manifest, config)
        log.info("resumed from %s at step %d", args.resume, trainer.global_step)
    else:
        trainer = Trainer(config, manifest)

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    log_path = out_dir / "log.ndjson"

    def write_checkpoint(ckpt: Checkpoint) -> None:
        path = out_dir / f"checkpoint_{ckpt.step:07d}.ckpt"
        save_checkpoint(ckpt, path)
        log.info("checkpoint at step %d -> %s", ckpt.step, path)

    with log_path.open("a", encoding="utf-8") as fh:

        def on_report(report):
            fh.write(report.to_json() + "\n")

        trainer.run(
            on_report=on_report,
            checkpoint_every=config.train.checkpoint_every,
            on_checkpoint=write_checkpoint,
        )
    final = trainer.to_checkpoint()
    save_checkpoint(final, out_dir / "final.ckpt")
    log.info("training complete at step %d; final checkpoint written", final.step)
    return 0


# ---------------------------------------------------------------------------
# inference commands

def cmd_expand(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, config = restore_model(ckpt)
    img = datakit.load_image_tensor(args.input)
    size = config.model.input_size
    if img.shape[1] != size or img.shape[2] != size:
        raise ConfigError(
            f"input must be {size}x{size} (the configured encoder input), "
            f"got {img.shape[1]}x{img.shape[2]}"
        )
    out = model.expand(torch.from_numpy(img[None])).numpy()[0]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    datakit.save_image_tensor(out, args.out)
    log.info("wrote %dx%d expansion to %s", out.shape[1], out.shape[2], args.out)
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, _ = restore_model(ckpt)
    out_dir = Path(args.out_dir)
    images = decode_latent_samples(model, args.n, args.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        datakit.save_image_tensor(img, out_dir / f"sample_{i:05d}.png")
    log.info("wrote %d samples to %s", len(images), out_dir)
    return 0


def cmd_extract(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, _ = restore_model(ckpt)
    manifest = Manifest.load(args.manifest)
    n, d = export_embeddings(model.encoder, manifest, args.split, args.out)
    log.info("wrote %d x %d embeddings to %s", n, d, args.out)
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    if args.train_embeddings and args.eval_embeddings:
        x_train, y_train, _ = load_embeddings(args.train_embeddings)
        x_eval, y_eval, _ = load_embeddings(args.eval_embeddings)
        if (y_train < 0).any() or (y_eval < 0).any():
            raise ConfigError("embeddings contain unlabeled rows; cannot probe")
    elif args.checkpoint and args.manifest:
        ckpt = load_checkpoint(args.checkpoint)
        model, _ = restore_model(ckpt)
        manifest = Manifest.load(args.manifest)
        x_train, y_train, x_eval, y_eval = probe_feature_sets(
            model.encoder, manifest, eval_split=args.split
        )
    else:
        raise ConfigError(
            "probe needs either --checkpoint and --manifest, or both "
            "--train-embeddings and --eval-embeddings"
        )
    probe = train_probe(
        x_train.astype(np.float64),
        y_train,
        l2=args.l2,
        max_iter=args.max_iter,
        tol=args.tol,
    )
    report = evaluate_probe(
        probe, x_eval.astype(np.float64), y_eval, positive_class=args.positive_class
    )
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(payload, encoding="utf-8")
    sys.stdout.write(payload)
    return 0


def cmd_fid(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, _ = restore_model(ckpt)
    manifest = Manifest.load(args.manifest)
    if args.features == "encoder":
        feature_fn = EncoderFeatures(model.encoder)
    else:
        feature_fn = channel_stats_features
    if args.mode == "sampled":
        value = fid_sampled(
            model, feature_fn, manifest, args.n, args.seed, real_split=args.real_split
        )
    else:
        value = fid_expanded(
            model, feature_fn, manifest, split=args.split, real_split=args.real_split
        )
    payload = json.dumps(
        {"fid": value, "mode": args.mode, "features": args.features},
        indent=2,
        sort_keys=True,
    ) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(payload, encoding="utf-8")
    sys.stdout.write(payload)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldexpand",
        description="Visual-field-expansion training and evaluation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build a manifest from a tile directory")
    p.add_argument("tile_dir")
    p.add_argument("--out", required=True, help="manifest CSV path")
    p.add_argument("--masks", default=None, help="annotation mask directory")
    p.add_argument("--ratios", default="0.7,0.15,0.15")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--central-size", type=int, default=None,
                   help="central window for mask labels (default: half the tile)")
    p.add_argument("--balance", action="store_true",
                   help="globally downsample classes to equal counts")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run progressive training")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--out-dir", default="runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("expand", help="expand one input crop to a full tile")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("sample", help="decode Gaussian samples to PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("extract", help="export encoder embeddings for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train", choices=datakit.SPLITS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("probe", help="train/evaluate the linear probe")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default="test", choices=datakit.SPLITS,
                   help="held-out split to report on")
    p.add_argument("--train-embeddings", default=None)
    p.add_argument("--eval-embeddings", default=None)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=1500)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--positive-class", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("fid", help="Frechet distance, sampled or expanded mode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", default="expanded", choices=("sampled", "expanded"))
    p.add_argument("-n", type=int, default=1000, help="sample count (sampled mode)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", choices=datakit.SPLITS,
                   help="split to expand (expanded mode)")
    p.add_argument("--real-split", default="train", choices=datakit.SPLITS,
                   help="split providing the real-image statistics")
    p.add_argument("--features", default="encoder",
                   choices=("encoder", "channel_stats"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fid)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, CheckpointError) as exc:
        log.error("%s", exc)
        return 2
    except TrainingAborted as exc:
        log.error("training aborted: %s", exc)
        return 3
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
