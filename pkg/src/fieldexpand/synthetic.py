"""Procedural tile corpus: two texture classes with distinct structure.

Every tile carries a shared nuisance texture (sharp-edged bands at random
orientation, frequency, phase, and tint) plus a fixed pale corner wedge,
so the tissue-masking pipeline retains it. The class signal is a set of
thin dark dashes: horizontal for class 0, vertical for class 1, with two
dashes inside the central crop. The dashes are low-variance relative to
the bands and the tint jitter, so summary statistics barely see them,
while reconstructing a tile requires encoding them.

Class 1 tiles also ship a small central annotation blob so mask-driven
labeling marks them positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# nuclei-dark dash color matches the base's saturation (dark in value
# only), so the saturation-Otsu tissue mask splits tissue from the pale
# wedge rather than the dashes from the base
_PINK = np.array([231.0, 158.0, 202.0])
_DARK = np.array([112.0, 77.0, 98.0])
_WHITE = np.array([244.0, 243.0, 242.0])


@dataclass(frozen=True)
class SyntheticTile:
    image_path: str
    mask_path: str
    patient_id: str
    label: int


def _band_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(1.5, 3.0)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(
        2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / size + phase
    )
    # steepened sine: sharp band edges lose detail under 2x upsampling,
    # which is exactly what the final growth stage has to recover
    wave = np.tanh(3.0 * wave) / np.tanh(3.0)
    # fine ripple (period 3-4 px): average pooling to the lower stages all
    # but erases it, so it only becomes a target at full resolution
    theta2 = rng.uniform(0, np.pi)
    freq2 = rng.uniform(7.0, 10.0)
    phase2 = rng.uniform(0, 2 * np.pi)
    ripple = np.sin(
        2 * np.pi * freq2 * (xx * np.cos(theta2) + yy * np.sin(theta2)) / size
        + phase2
    )
    shade = 0.70 + 0.24 * wave + 0.12 * ripple
    # per-tile color jitter: visible in the crop (so predictable for the
    # expansion task) but a dominant nuisance for summary statistics
    tint = rng.uniform(0.85, 1.15) * (1.0 + rng.uniform(-0.06, 0.06, size=3))
    return (_PINK * tint)[None, None, :] * shade[:, :, None]


def _draw_dash(
    img: np.ndarray, row: int, col: int, horizontal: bool, length: int, width: int
) -> None:
    if horizontal:
        img[row : row + width, col : col + length] = _DARK
    else:
        img[row : row + length, col : col + width] = _DARK


def _apply_background_wedge(img: np.ndarray) -> np.ndarray:
    # fixed corner and size: the expansion task can learn it exactly, so it
    # marks "background" for the tissue filter without adding irreducible
    # reconstruction error
    size = img.shape[0]
    side = max(2, size // 5)
    img[:side, :side] = _WHITE
    return img


def make_tile(
    rng: np.random.Generator, label: int, size: int = 32
) -> tuple[np.ndarray, np.ndarray]:
    """One (rgb uint8 HWC, mask uint8 HW) pair for the given class."""
    img = _band_texture(rng, size)
    horizontal = label == 0
    length = max(4, size * 3 // 16)
    width = max(1, size // 16)
    # two dashes fully inside the central half-size crop
    lo = size // 4 + 1
    hi = size - size // 4 - length - 1
    for _ in range(2):
        row = int(rng.integers(lo, hi + 1))
        col = int(rng.integers(lo, hi + 1))
        _draw_dash(img, row, col, horizontal, length, width)
    # one dash in the outer region
    row = int(rng.integers(0, max(1, size // 4 - width)))
    col = int(rng.integers(0, size - length))
    _draw_dash(img, row, col, horizontal, length, width)

    img = _apply_background_wedge(img)
    img += rng.normal(0.0, 2.5, img.shape)
    rgb = np.clip(img, 0, 255).astype(np.uint8)

    mask = np.zeros((size, size), dtype=np.uint8)
    if label == 1:
        yy, xx = np.mgrid[0:size, 0:size]
        center = size / 2 - 0.5
        blob = (yy - center) ** 2 + (xx - center) ** 2 <= (size / 10) ** 2
        mask[blob] = 255
    return rgb, mask


def generate_corpus(
    out_dir: str | Path,
    n_tiles: int = 500,
    tile_size: int = 32,
    n_patients: int = 10,
    seed: int = 0,
) -> list[SyntheticTile]:
    """Write tiles/ and masks/ PNG trees under out_dir; returns the listing.

    Classes alternate tile by tile and patients cycle, so every patient
    holds a balanced mix of both classes.
    """
    out_dir = Path(out_dir)
    tiles_dir = out_dir / "tiles"
    masks_dir = out_dir / "masks"
    tiles_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)

    listing = []
    for i in range(n_tiles):
        label = i % 2
        patient = (i // 2) % n_patients  # every patient sees both classes
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        rgb, mask = make_tile(rng, label, tile_size)
        name = f"p{patient:02d}_t{i:04d}.png"
        Image.fromarray(rgb, mode="RGB").save(tiles_dir / name, format="PNG")
        Image.fromarray(mask, mode="L").save(masks_dir / name, format="PNG")
        listing.append(
            SyntheticTile(
                image_path=str(tiles_dir / name),
                mask_path=str(masks_dir / name),
                patient_id=f"p{patient:02d}",
                label=label,
            )
        )
    return listing
