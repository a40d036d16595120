#!/usr/bin/env python3
"""End-to-end desk-scale experiment on the synthetic corpus.

Generates tiles, prepares a manifest, trains the expansion model with the
desk config, then runs the whole evaluation battery: sampling, one tile
expansion, embedding export, the linear probe, and both FID modes.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from fieldexpand import data as dk
from fieldexpand.cli import main as cli
from fieldexpand.synthetic import generate_corpus

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk.yaml"


def run(argv: list[str]) -> None:
    print("$ fieldexpand " + " ".join(argv))
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="desk_experiment")
    parser.add_argument("--n-tiles", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    corpus = out / "corpus"
    manifest = out / "manifest.csv"
    run_dir = out / "run"
    eval_dir = out / "eval"

    print(f"generating {args.n_tiles} synthetic tiles ...")
    generate_corpus(corpus, n_tiles=args.n_tiles, seed=args.seed)
    run([
        "prepare", str(corpus / "tiles"), "--masks", str(corpus / "masks"),
        "--out", str(manifest), "--seed", str(args.seed), "--central-size", "16",
    ])

    start = time.time()
    run([
        "train", "--config", str(CONFIG),
        "--override", f"manifest={manifest}",
        "--out-dir", str(run_dir),
    ])
    print(f"training took {time.time() - start:.0f}s")
    ckpt = run_dir / "final.ckpt"

    run(["sample", "--checkpoint", str(ckpt), "-n", "8",
         "--seed", str(args.seed), "--out-dir", str(eval_dir / "samples")])

    loaded = dk.Manifest.load(manifest)
    record = loaded.split_records("test")[0]
    crop_path = eval_dir / "crop.png"
    eval_dir.mkdir(parents=True, exist_ok=True)
    dk.save_image_tensor(
        dk.center_crop(dk.load_image_tensor(loaded.resolve_path(record))),
        crop_path,
    )
    run(["expand", "--checkpoint", str(ckpt), "--input", str(crop_path),
         "--out", str(eval_dir / "expansion.png")])

    for split in ("train", "test"):
        run(["extract", "--checkpoint", str(ckpt), "--manifest", str(manifest),
             "--split", split, "--out", str(eval_dir / f"{split}.emb")])
    run(["probe", "--train-embeddings", str(eval_dir / "train.emb"),
         "--eval-embeddings", str(eval_dir / "test.emb"),
         "--out", str(eval_dir / "probe_metrics.json")])

    for mode in ("sampled", "expanded"):
        run(["fid", "--checkpoint", str(ckpt), "--manifest", str(manifest),
             "--mode", mode, "-n", "256", "--seed", str(args.seed),
             "--out", str(eval_dir / f"fid_{mode}.json")])

    metrics = json.loads((eval_dir / "probe_metrics.json").read_text())
    fid_s = json.loads((eval_dir / "fid_sampled.json").read_text())["fid"]
    fid_e = json.loads((eval_dir / "fid_expanded.json").read_text())["fid"]
    print("\n=== desk experiment summary ===")
    print(f"probe accuracy (test split): {metrics['accuracy']:.3f}")
    print(f"probe balanced accuracy:     {metrics['balanced_accuracy']:.3f}")
    print(f"FID sampled:  {fid_s:.3f}")
    print(f"FID expanded: {fid_e:.3f}")
    print(f"outputs under {out.resolve()}")


if __name__ == "__main__":
    main()
