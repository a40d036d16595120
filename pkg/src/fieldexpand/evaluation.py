"""Generation and representation evaluation: FID modes and embeddings.

The Frechet machinery is feature-extractor-agnostic: any callable mapping
an (n, 3, h, w) image batch in [-1, 1] to an (n, d) feature matrix plugs
in. The default extractor is the model's own frozen encoder; a
dependency-free channel-statistics extractor is available as a fallback.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import Manifest, center_crop, load_image_tensor
from .frechet import frechet_distance, gaussian_stats
from .models import Encoder, ExpansionModel, GrowthState, sample_latent

FeatureExtractor = Callable[[np.ndarray], np.ndarray]


class EncoderFeatures:
    """Feature extractor backed by a frozen encoder.

    Inputs whose side is an integer multiple of the encoder's input size
    are average-pooled down first (full tiles are 2x the crop the encoder
    was trained on).
    """

    def __init__(self, encoder: Encoder, batch_size: int = 64):
        self.encoder = encoder
        self.batch_size = batch_size

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (n, 3, h, w) images, got {images.shape}")
        side = images.shape[2]
        size = self.encoder.input_size
        if side != size:
            if side % size != 0:
                raise ValueError(
                    f"image side {side} is not a multiple of encoder input {size}"
                )
            factor = side // size
        else:
            factor = 1
        out = []
        self.encoder.eval()
        with torch.no_grad():
            for start in range(0, images.shape[0], self.batch_size):
                batch = torch.from_numpy(images[start : start + self.batch_size])
                if factor > 1:
                    batch = torch.nn.functional.avg_pool2d(batch, factor)
                out.append(self.encoder(batch).numpy())
        return np.concatenate(out, axis=0)


def channel_stats_features(images: np.ndarray) -> np.ndarray:
    """Per-channel mean/std plus 2x2 block means; works at any resolution."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ValueError(f"expected (n, c, h, w) images, got {images.shape}")
    n, c, h, w = images.shape
    mean = images.mean(axis=(2, 3))
    std = images.std(axis=(2, 3))
    hh, ww = h // 2, w // 2
    quads = [
        images[:, :, :hh, :ww],
        images[:, :, :hh, ww:],
        images[:, :, hh:, :ww],
        images[:, :, hh:, ww:],
    ]
    blocks = [q.mean(axis=(2, 3)) for q in quads]
    return np.concatenate([mean, std] + blocks, axis=1)


def load_split_images(manifest: Manifest, split: str) -> np.ndarray:
    """All tiles of a split, in manifest order, as one (n, 3, H, W) array."""
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"split '{split}' is empty")
    return np.stack(
        [load_image_tensor(manifest.resolve_path(r)) for r in records]
    ).astype(np.float32)


def decode_latent_samples(
    model: ExpansionModel, n: int, seed: int, batch_size: int = 64
) -> np.ndarray:
    """Decode n Gaussian samples at the final grown stage."""
    if n < 1:
        raise ValueError("n must be >= 1")
    state = GrowthState(stage=model.grown_stage, alpha=1.0)
    z = sample_latent(n, model.cfg.latent_dim, seed)
    out = []
    with torch.no_grad():
        for start in range(0, n, batch_size):
            out.append(model.decoder(z[start : start + batch_size], state).numpy())
    return np.concatenate(out, axis=0)


def expansion_images(
    model: ExpansionModel, manifest: Manifest, split: str, batch_size: int = 64
) -> np.ndarray:
    """Full-model expansions dec(enc(C(y))) for every tile of a split."""
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"split '{split}' is empty")
    out = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            crops = np.stack(
                [
                    center_crop(load_image_tensor(manifest.resolve_path(r)))
                    for r in chunk
                ]
            )
            out.append(model.expand(torch.from_numpy(crops)).numpy())
    return np.concatenate(out, axis=0)


def fid_from_images(
    generated: np.ndarray, real: np.ndarray, feature_fn: FeatureExtractor
) -> float:
    """Frechet distance between feature Gaussians of two image sets."""
    stats_gen = gaussian_stats(feature_fn(generated))
    stats_real = gaussian_stats(feature_fn(real))
    return frechet_distance(stats_gen, stats_real)


def fid_sampled(
    model: ExpansionModel,
    feature_fn: FeatureExtractor,
    manifest: Manifest,
    n: int,
    seed: int,
    real_split: str = "train",
    batch_size: int = 64,
) -> float:
    """FID between n decoded Gaussian samples and the real tiles."""
    if n < 2:
        raise ValueError("n must be >= 2 to fit a Gaussian")
    generated = decode_latent_samples(model, n, seed, batch_size)
    real = load_split_images(manifest, real_split)
    return fid_from_images(generated, real, feature_fn)


def fid_expanded(
    model: ExpansionModel,
    feature_fn: FeatureExtractor,
    manifest: Manifest,
    split: str = "train",
    real_split: str = "train",
    batch_size: int = 64,
) -> float:
    """FID between full-model tile expansions and the real tiles."""
    expanded = expansion_images(model, manifest, split, batch_size)
    real = load_split_images(manifest, real_split)
    return fid_from_images(expanded, real, feature_fn)


# ---------------------------------------------------------------------------
# embedding export

def encode_split(
    encoder: Encoder, manifest: Manifest, split: str, batch_size: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    """Latent codes (from center crops) and labels for a split, in order."""
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"split '{split}' is empty")
    labels = np.array(
        [-1 if r.label is None else r.label for r in records], dtype=np.int64
    )
    out = []
    encoder.eval()
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            crops = np.stack(
                [
                    center_crop(load_image_tensor(manifest.resolve_path(r)))
                    for r in chunk
                ]
            )
            out.append(encoder(torch.from_numpy(crops)).numpy())
    return np.concatenate(out, axis=0), labels


def export_embeddings(
    encoder: Encoder,
    manifest: Manifest,
    split: str,
    path: str | Path,
    batch_size: int = 64,
) -> tuple[int, int]:
    """Write latent codes as raw little-endian float32 rows plus a sidecar.

    The sidecar `<path>.json` records {n, d, labels, class_names}; the
    round trip is bitwise lossless.
    """
    features, labels = encode_split(encoder, manifest, split, batch_size)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(features, dtype="<f4").tobytes())
    sidecar = {
        "n": int(features.shape[0]),
        "d": int(features.shape[1]),
        "labels": [int(v) for v in labels],
        "class_names": list(manifest.class_names),
    }
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return features.shape


def load_embeddings(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read an embeddings file back: (features, labels, class_names)."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    features = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(
        meta["n"], meta["d"]
    )
    labels = np.asarray(meta["labels"], dtype=np.int64)
    return features.copy(), labels, list(meta["class_names"])


def probe_feature_sets(
    encoder: Encoder,
    manifest: Manifest,
    train_split: str = "train",
    eval_split: str = "test",
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Latents and labels for probe fitting and held-out scoring."""
    x_train, y_train = encode_split(encoder, manifest, train_split, batch_size)
    x_eval, y_eval = encode_split(encoder, manifest, eval_split, batch_size)
    for name, y in (("train", y_train), (eval_split, y_eval)):
        if (y < 0).any():
            raise ValueError(f"{name} split has unlabeled tiles; cannot probe")
    return x_train, y_train, x_eval, y_eval
