"""Dev-only: one desk-training variant, per-stage L1 trajectory report."""

import sys
import time
from pathlib import Path

import numpy as np

from fieldexpand import data as dk
from fieldexpand.config import AblationFlags, ExperimentConfig, ModelConfig, TrainConfig
from fieldexpand.synthetic import generate_corpus
from fieldexpand.training import Trainer

ROOT = Path("/tmp/desk_corpus_shared")


def build_manifest():
    if not (ROOT / "tiles").exists():
        generate_corpus(ROOT, n_tiles=500, tile_size=32, n_patients=10, seed=0)
    paths = sorted((ROOT / "tiles").glob("*.png"))
    recs = [
        dk.TileRecord(str(p), p.stem.split("_")[0], int(p.stem.split("_t")[1]) % 2, "", 1.0)
        for p in paths
    ]
    return dk.split_by_patient(recs, (0.7, 0.15, 0.15), seed=0,
                               class_names=["banded", "dotted"], tile_size=32, central_size=16)


def run(tag, steps, lam, advw, lr, dz_on=True, fade=0.5):
    man = build_manifest()
    cfg = ExperimentConfig(
        manifest="unused",
        model=ModelConfig(
            input_size=16, latent_dim=64, encoder_widths=(16, 32, 64, 128),
            encoder_blocks_per_stage=1, stem_downsample=1, base_resolution=4,
            decoder_base_channels=96, decoder_min_channels=24,
            latent_disc_hidden=64, latent_disc_layers=3, seed=0,
        ),
        train=TrainConfig(
            lambda_recon=lam, adv_weight=advw, learning_rate=lr,
            adam_beta0=0.0, adam_beta1=0.999, batch_size=16,
            steps_per_stage=steps, fade_fraction=fade,
            freeze_backbone=False, checkpoint_every=100000, seed=0,
        ),
        ablation=AblationFlags(disable_latent_discriminator=not dz_on),
    )
    tr = Trainer(cfg, man)
    reports = []
    t0 = time.time()
    tr.run(on_report=reports.append)
    wall = time.time() - t0
    print(f"[{tag}] steps={sum(steps)} wall={wall:.0f}s")
    for stage in range(len(steps)):
        rs = [r for r in reports if r.stage == stage]
        k = min(10, len(rs))
        head = np.mean([r.loss_l1 for r in rs[:k]])
        mid = np.mean([r.loss_l1 for r in rs[len(rs)//2 - k//2 : len(rs)//2 + k//2]])
        tail = np.mean([r.loss_l1 for r in rs[-k:]])
        print(f"[{tag}] stage {stage}: entry {head:.4f}  mid {mid:.4f}  end {tail:.4f}"
              f"  (ratio end/entry {tail/head:.3f})")
    sys.stdout.flush()


if __name__ == "__main__":
    tag = sys.argv[1]
    spec = {
        "base": dict(steps=(100, 150, 250, 500), lam=10.0, advw=1.0, lr=1e-3),
        "weakadv": dict(steps=(100, 150, 250, 500), lam=10.0, advw=0.2, lr=1e-3),
        "lam40": dict(steps=(100, 150, 250, 500), lam=40.0, advw=1.0, lr=1e-3),
        "nodz": dict(steps=(100, 150, 250, 500), lam=10.0, advw=1.0, lr=1e-3, dz_on=False),
        "lowlr": dict(steps=(100, 150, 250, 500), lam=10.0, advw=1.0, lr=5e-4),
        "longfinal": dict(steps=(100, 150, 250, 1500), lam=10.0, advw=1.0, lr=1e-3),
        "wf_weak": dict(steps=(150, 250, 400, 1200), lam=10.0, advw=0.2, lr=1e-3),
    }[tag]
    run(tag, **spec)
