import numpy as np
import pytest

from fieldexpand import data as dk
from fieldexpand.config import AblationFlags, ExperimentConfig, ModelConfig, TrainConfig
from fieldexpand.synthetic import generate_corpus


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, n_tiles=40, tile_size=32, n_patients=5, seed=0)
    return root


@pytest.fixture(scope="session")
def corpus_manifest(corpus_dir):
    """Manifest over the session corpus, labels taken from the generator."""
    paths = sorted((corpus_dir / "tiles").glob("*.png"))
    records = []
    for path in paths:
        index = int(path.stem.split("_t")[1])
        records.append(
            dk.TileRecord(
                image_path=str(path),
                patient_id=path.stem.split("_")[0],
                label=index % 2,
                split="",
                tissue_fraction=1.0,
            )
        )
    return dk.split_by_patient(
        records,
        (0.7, 0.15, 0.15),
        seed=0,
        class_names=["banded", "dotted"],
        tile_size=32,
        central_size=16,
    )


def make_tiny_config(**overrides) -> ExperimentConfig:
    """Smallest config that exercises growth: 16px crops, 4 -> 32 stages."""
    model = ModelConfig(
        input_size=16,
        latent_dim=16,
        encoder_widths=(8, 16, 16, 32),
        encoder_blocks_per_stage=1,
        stem_downsample=1,
        base_resolution=4,
        decoder_base_channels=32,
        decoder_min_channels=8,
        latent_disc_hidden=32,
        latent_disc_layers=3,
        seed=0,
    )
    train = TrainConfig(
        lambda_recon=10.0,
        adv_weight=1.0,
        learning_rate=1e-3,
        adam_beta0=0.0,
        adam_beta1=0.999,
        batch_size=8,
        steps_per_stage=4,
        fade_fraction=0.5,
        freeze_backbone=False,
        checkpoint_every=1000,
        seed=1,
    )
    ablation = AblationFlags()
    model_kw = {k[6:]: v for k, v in overrides.items() if k.startswith("model_")}
    train_kw = {k[6:]: v for k, v in overrides.items() if k.startswith("train_")}
    abl_kw = {k[9:]: v for k, v in overrides.items() if k.startswith("ablation_")}
    for key, value in model_kw.items():
        setattr(model, key, value)
    for key, value in train_kw.items():
        setattr(train, key, value)
    for key, value in abl_kw.items():
        setattr(ablation, key, value)
    return ExperimentConfig(
        manifest="unused", model=model, train=train, ablation=ablation
    )


@pytest.fixture
def tiny_config():
    return make_tiny_config


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(123)
