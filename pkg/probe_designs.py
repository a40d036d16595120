"""Dev-only: measure random-encoder probe accuracy for texture designs."""

import numpy as np
import torch

from fieldexpand.config import ModelConfig
from fieldexpand.models import ExpansionModel
from fieldexpand.probe import evaluate_probe, train_probe

PINK = np.array([231.0, 158.0, 202.0])
DARK = np.array([112.0, 77.0, 98.0])
WHITE = np.array([244.0, 243.0, 242.0])
SIZE = 32


def wedge(rng, img):
    s = img.shape[0]
    wh = int(rng.integers(s // 4, s // 3 + 1))
    ww = int(rng.integers(s // 4, s // 3 + 1))
    corner = int(rng.integers(0, 4))
    rows = slice(0, wh) if corner < 2 else slice(s - wh, s)
    cols = slice(0, ww) if corner % 2 == 0 else slice(s - ww, s)
    img[rows, cols] = WHITE
    return img


def bands(rng, theta, freq=None, gain=1.0):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    freq = freq if freq is not None else rng.uniform(1.5, 3.0)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / SIZE + phase)
    shade = 0.72 + 0.28 * wave
    return PINK[None, None, :] * shade[:, :, None] * gain


def d2_orientation(rng, label, nuisance=False):
    gain = rng.uniform(0.8, 1.2) if nuisance else 1.0
    theta = 0.0 if label == 0 else np.pi / 2
    theta += rng.uniform(-0.15, 0.15)
    return bands(rng, theta, gain=gain)


def d2d_diag(rng, label, nuisance=True):
    gain = rng.uniform(0.8, 1.2) if nuisance else 1.0
    theta = np.pi / 4 if label == 0 else 3 * np.pi / 4
    theta += rng.uniform(-0.15, 0.15)
    return bands(rng, theta, gain=gain)


def d3_phase(rng, label):
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    freq = rng.uniform(1.5, 3.0)
    phase = rng.uniform(0, 2 * np.pi)
    theta = rng.uniform(0, np.pi)
    wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / SIZE + phase)
    img = np.ones((SIZE, SIZE, 3)) * PINK[None, None, :]
    img[:, :, 0] += 30 * wave
    img[:, :, 2] += 30 * (wave if label == 0 else -wave)
    return img


def d4_lattice(rng, label):
    img = np.ones((SIZE, SIZE, 3)) * PINK[None, None, :]
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    pitch = 8
    centers = []
    if label == 0:
        for cy in range(pitch // 2, SIZE, pitch):
            for cx in range(pitch // 2, SIZE, pitch):
                centers.append((cy + rng.uniform(-1, 1), cx + rng.uniform(-1, 1)))
    else:
        for _ in range(16):
            centers.append((rng.uniform(2, SIZE - 2), rng.uniform(2, SIZE - 2)))
    for cy, cx in centers:
        r = rng.uniform(2.0, 3.2)
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r**2] = DARK
    return img


def make_set(fn, n, seed, **kw):
    imgs, labels = [], []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        label = i % 2
        img = fn(rng, label, **kw)
        img = wedge(rng, img)
        img += rng.normal(0, 3.0, img.shape)
        img = np.clip(img, 0, 255).astype(np.uint8)
        t = img.astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0
        imgs.append(t[:, 8:24, 8:24])  # center crop, the encoder input
        labels.append(label)
    return np.stack(imgs), np.array(labels)


def random_probe_acc(design_fn, seeds=(1001, 1002, 1003), **kw):
    xtr_imgs, ytr = make_set(design_fn, 350, seed=0, **kw)
    xte_imgs, yte = make_set(design_fn, 100, seed=999, **kw)
    accs = []
    for s in seeds:
        mc = ModelConfig(
            input_size=16, latent_dim=64, encoder_widths=(16, 32, 64, 128),
            encoder_blocks_per_stage=1, stem_downsample=1, base_resolution=4,
            decoder_base_channels=64, decoder_min_channels=16,
            latent_disc_hidden=64, seed=s,
        )
        enc = ExpansionModel(mc, 4).encoder
        enc.eval()
        with torch.no_grad():
            ztr = enc(torch.from_numpy(xtr_imgs)).numpy().astype(np.float64)
            zte = enc(torch.from_numpy(xte_imgs)).numpy().astype(np.float64)
        m = train_probe(ztr, ytr, l2=1e-4, max_iter=1500)
        accs.append(evaluate_probe(m, zte, yte).accuracy)
    return accs


if __name__ == "__main__":
    for name, fn, kw in [
        ("D2 axis orientation", d2_orientation, {}),
        ("D2n axis + gain nuisance", d2_orientation, {"nuisance": True}),
        ("D2d diagonal + nuisance", d2d_diag, {}),
        ("D3 channel phase", d3_phase, {}),
        ("D4 lattice regularity", d4_lattice, {}),
    ]:
        accs = random_probe_acc(fn, **kw)
        print(f"{name:28s} random-encoder probe acc: {accs}  median={np.median(accs):.3f}")
