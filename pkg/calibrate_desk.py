"""Dev-only calibration for the desk-scale acceptance run (not shipped)."""

import time
from pathlib import Path

import numpy as np

from fieldexpand import data as dk
from fieldexpand.config import AblationFlags, ExperimentConfig, ModelConfig, TrainConfig
from fieldexpand.evaluation import probe_feature_sets
from fieldexpand.models import ExpansionModel
from fieldexpand.probe import evaluate_probe, train_probe
from fieldexpand.synthetic import generate_corpus
from fieldexpand.training import Trainer

ROOT = Path("/tmp/desk_cal")


def build_manifest():
    tiles = generate_corpus(ROOT, n_tiles=500, tile_size=32, n_patients=10, seed=0)
    recs = [dk.TileRecord(t.image_path, t.patient_id, t.label, "", 1.0) for t in tiles]
    return dk.split_by_patient(
        recs, (0.7, 0.15, 0.15), seed=0,
        class_names=["normal", "tumor"], tile_size=32, central_size=16,
    )


def desk_config(steps=(250, 350, 500, 900)):
    return ExperimentConfig(
        manifest="unused",
        model=ModelConfig(
            input_size=16, latent_dim=64, encoder_widths=(16, 32, 64, 128),
            encoder_blocks_per_stage=1, stem_downsample=1, base_resolution=4,
            decoder_base_channels=64, decoder_min_channels=16,
            latent_disc_hidden=64, latent_disc_layers=3, seed=0,
        ),
        train=TrainConfig(
            lambda_recon=10.0, adv_weight=1.0, learning_rate=1e-3,
            adam_beta0=0.0, adam_beta1=0.999, batch_size=16,
            steps_per_stage=steps, fade_fraction=0.5,
            freeze_backbone=False, checkpoint_every=10_000, seed=0,
        ),
        ablation=AblationFlags(),
    )


def main():
    man = build_manifest()
    cfg = desk_config()
    tr = Trainer(cfg, man)
    reports = []
    t0 = time.time()
    tr.run(on_report=reports.append)
    wall = time.time() - t0
    total = cfg.schedule().total_steps
    final_stage = cfg.schedule().final_stage
    finals = [r for r in reports if r.stage == final_stage]
    k = 10
    entry = float(np.mean([r.loss_l1 for r in finals[:k]]))
    end = float(np.mean([r.loss_l1 for r in finals[-k:]]))
    first = finals[0].loss_l1
    last = finals[-1].loss_l1
    print(f"steps={total} wall={wall:.1f}s  final-stage L1 entry(mean{k})={entry:.4f} "
          f"end(mean{k})={end:.4f} ratio={end/entry:.3f}")
    print(f"single-step entry={first:.4f} last={last:.4f} ratio={last/first:.3f}")

    # probe: trained encoder vs 3 random-init encoders
    def probe_acc(encoder):
        xtr, ytr, xte, yte = probe_feature_sets(encoder, man)
        model = train_probe(xtr.astype(np.float64), ytr, l2=1e-4, max_iter=1500)
        return evaluate_probe(model, xte.astype(np.float64), yte).accuracy

    t1 = time.time()
    acc_trained = probe_acc(tr.model.encoder)
    rand_accs = []
    for seed in (1001, 1002, 1003):
        mc = ModelConfig(**{**cfg.model.__dict__, "seed": seed})
        rand_accs.append(probe_acc(ExpansionModel(mc, cfg.num_stages()).encoder))
    print(f"probe wall={time.time()-t1:.1f}s trained={acc_trained:.3f} "
          f"random={rand_accs} median={np.median(rand_accs):.3f} "
          f"gap={acc_trained - np.median(rand_accs):.3f}")


if __name__ == "__main__":
    main()
