"""Tile ingestion pipeline: tissue masks, labels, patient splits, batches.

Images travel through the package as float32 arrays in channel/height/width
layout with values in [-1, 1] (8-bit pixels map via ``v / 127.5 - 1``).
A prepared corpus is described by a manifest CSV plus a JSON sidecar; every
retained tile has tissue fraction >= 0.5 and all tiles of one patient share
a split.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ("image_path", "patient_id", "label", "split", "tissue_fraction")


# ---------------------------------------------------------------------------
# image tensors

def load_image_tensor(path: str | Path) -> np.ndarray:
    """Read an 8-bit RGB PNG into a float32 CHW array in [-1, 1]."""
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
    return np.ascontiguousarray(rgb.transpose(2, 0, 1)) / 127.5 - 1.0


def image_tensor_to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a CHW [-1, 1] tensor to HWC uint8.

    Fixed rule for bit-exact reproducibility: round(clamp((v + 1) * 127.5,
    0, 255)) with halves rounding up.
    """
    scaled = np.clip((np.asarray(img, dtype=np.float64) + 1.0) * 127.5, 0.0, 255.0)
    quant = np.floor(scaled + 0.5).clip(0, 255).astype(np.uint8)
    return quant.transpose(1, 2, 0)


def save_image_tensor(img: np.ndarray, path: str | Path) -> None:
    Image.fromarray(image_tensor_to_uint8(img), mode="RGB").save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale PNG annotation mask; nonzero means tumor."""
    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"))
    return gray > 0


# ---------------------------------------------------------------------------
# tissue segmentation

def otsu_threshold(histogram: Sequence[int] | np.ndarray) -> int:
    """Threshold of a 256-bin histogram maximizing between-class variance.

    Pixels strictly above the returned threshold count as foreground. Ties
    resolve to the smallest maximizing threshold; a single occupied bin is
    returned as-is (degenerate single-class histogram).
    """
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.shape != (256,):
        raise ValueError(f"histogram must have 256 bins, got shape {hist.shape}")
    if (hist < 0).any():
        raise ValueError("histogram counts must be non-negative")
    total = hist.sum()
    if total == 0:
        raise ValueError("histogram has no mass")
    occupied = np.flatnonzero(hist)
    if occupied.size == 1:
        return int(occupied[0])

    bins = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    m0 = np.cumsum(hist * bins)
    w1 = total - w0
    mean_total = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = np.where(w0 > 0, m0 / w0, 0.0)
        mu1 = np.where(w1 > 0, (mean_total - m0) / w1, 0.0)
    between = np.where((w0 > 0) & (w1 > 0), w0 * w1 * (mu0 - mu1) ** 2, 0.0)
    return int(np.argmax(between))  # argmax takes the first (smallest) maximizer


def saturation_channel(rgb: np.ndarray) -> np.ndarray:
    """HSV saturation of a CHW [-1, 1] RGB image, quantized to uint8.

    Standard formulation S = (max - min) / max with S = 0 where max = 0;
    quantization is floor(S * 255 + 0.5).
    """
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected a 3-channel CHW image, got shape {rgb.shape}")
    unit = np.clip((np.asarray(rgb, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)
    cmax = unit.max(axis=0)
    cmin = unit.min(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sat = np.where(cmax > 0, (cmax - cmin) / cmax, 0.0)
    return np.floor(sat * 255.0 + 0.5).astype(np.uint8)


def compute_tissue_mask(rgb: np.ndarray) -> np.ndarray:
    """Binary tissue mask: saturation above its adaptive Otsu threshold."""
    sat = saturation_channel(rgb)
    hist = np.bincount(sat.ravel(), minlength=256)
    return sat > otsu_threshold(hist)


def grid_tiles(
    mask: np.ndarray, tile_size: int, stride: int
) -> list[tuple[int, int, float]]:
    """Enumerate (row, col, tissue_fraction) over a regular grid of windows.

    Returns the top-left corner of every fully contained window; the caller
    filters by the >= 0.5 retention rule. A tile larger than the mask yields
    an empty list.
    """
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    h, w = mask.shape
    if tile_size > h or tile_size > w:
        return []

    # integral image makes each window sum O(1)
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)
    area = float(tile_size * tile_size)
    out = []
    for r in range(0, h - tile_size + 1, stride):
        for c in range(0, w - tile_size + 1, stride):
            r2, c2 = r + tile_size, c + tile_size
            total = (
                integral[r2, c2]
                - integral[r, c2]
                - integral[r2, c]
                + integral[r, c]
            )
            out.append((r, c, total / area))
    return out


def label_tile(tumor_mask: np.ndarray, central_size: int) -> bool:
    """True iff any tumor pixel lies inside the centered window.

    The window is exact only when tile and window sides share parity, so a
    parity mismatch is rejected.
    """
    mask = np.asarray(tumor_mask, dtype=bool)
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise ValueError(f"tumor mask must be square, got shape {mask.shape}")
    tile_size = mask.shape[0]
    if not 0 < central_size <= tile_size:
        raise ValueError("central_size must lie in [1, tile_size]")
    if (tile_size - central_size) % 2 != 0:
        raise ValueError(
            f"tile size {tile_size} and central size {central_size} "
            "must share parity"
        )
    off = (tile_size - central_size) // 2
    return bool(mask[off : off + central_size, off : off + central_size].any())


def center_crop(img: np.ndarray) -> np.ndarray:
    """Centered half-size crop of a CHW image (the crop operator)."""
    if img.ndim != 3:
        raise ValueError("expected a CHW image")
    _, h, w = img.shape
    if h % 2 != 0 or w % 2 != 0:
        raise ValueError(f"height and width must be even, got {h}x{w}")
    ch, cw = h // 2, w // 2
    top, left = (h - ch) // 2, (w - cw) // 2
    return img[:, top : top + ch, left : left + cw]


# ---------------------------------------------------------------------------
# manifest

@dataclass(frozen=True)
class TileRecord:
    image_path: str
    patient_id: str
    label: int | None
    split: str
    tissue_fraction: float


@dataclass
class Manifest:
    records: list[TileRecord]
    class_names: list[str]
    seed: int
    tile_size: int
    central_size: int
    root: Path = Path(".")

    def split_records(self, split: str) -> list[TileRecord]:
        if split not in SPLITS:
            raise ValueError(f"unknown split '{split}', expected one of {SPLITS}")
        return [r for r in self.records if r.split == split]

    def resolve_path(self, record: TileRecord) -> Path:
        path = Path(record.image_path)
        return path if path.is_absolute() else self.root / path

    def save(self, path: str | Path) -> None:
        """Write the manifest CSV and its JSON sidecar deterministically."""
        path = Path(path)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in self.records:
            writer.writerow(
                [
                    rec.image_path,
                    rec.patient_id,
                    "" if rec.label is None else rec.label,
                    rec.split,
                    repr(float(rec.tissue_fraction)),
                ]
            )
        path.write_text(buf.getvalue(), encoding="utf-8")
        sidecar = {
            "class_names": list(self.class_names),
            "seed": self.seed,
            "tile_size": self.tile_size,
            "central_size": self.central_size,
        }
        sidecar_path(path).write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        records = []
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != MANIFEST_HEADER:
                raise ValueError(f"unexpected manifest header: {header}")
            for row in reader:
                image_path, patient_id, label, split, fraction = row
                records.append(
                    TileRecord(
                        image_path=image_path,
                        patient_id=patient_id,
                        label=None if label == "" else int(label),
                        split=split,
                        tissue_fraction=float(fraction),
                    )
                )
        meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
        return cls(
            records=records,
            class_names=list(meta["class_names"]),
            seed=int(meta["seed"]),
            tile_size=int(meta["tile_size"]),
            central_size=int(meta["central_size"]),
            root=path.parent,
        )


def sidecar_path(manifest_path: str | Path) -> Path:
    return Path(manifest_path).with_suffix(".json")


def split_by_patient(
    records: Sequence[TileRecord],
    ratios: tuple[float, float, float],
    seed: int,
    class_names: Sequence[str] = (),
    tile_size: int = 0,
    central_size: int = 0,
) -> Manifest:
    """Assign train/val/test splits patient-wise.

    Distinct patient ids are shuffled with the seed, then counted out by
    largest-remainder rounding of ratio * patient_count. Remainder ties go
    to the earlier split; every split receives at least one patient.
    """
    if len(ratios) != 3:
        raise ValueError("ratios must be (train, val, test)")
    if any(r <= 0 for r in ratios):
        raise ValueError("ratios must be strictly positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    patients = sorted({r.patient_id for r in records})
    if len(patients) < 3:
        raise ValueError(f"need at least 3 distinct patients, got {len(patients)}")

    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    counts = _largest_remainder_counts(len(patients), ratios)

    assignment: dict[str, str] = {}
    cursor = 0
    for split, count in zip(SPLITS, counts):
        for patient in order[cursor : cursor + count]:
            assignment[patient] = split
        cursor += count

    new_records = [replace(r, split=assignment[r.patient_id]) for r in records]
    return Manifest(
        records=new_records,
        class_names=list(class_names),
        seed=seed,
        tile_size=tile_size,
        central_size=central_size,
    )


def _largest_remainder_counts(
    n: int, ratios: tuple[float, float, float]
) -> list[int]:
    quotas = [r * n for r in ratios]
    counts = [int(np.floor(q)) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    # stable sort on negated remainders: ties keep split order (train first)
    order = np.argsort([-r for r in remainders], kind="stable")
    for i in range(n - sum(counts)):
        counts[order[i]] += 1
    # minimum one patient per split, taken from the currently largest split
    while min(counts) == 0:
        donor = counts.index(max(counts))
        counts[donor] -= 1
        counts[counts.index(0)] += 1
    return counts


def downsample_to_balance(
    records: Sequence[TileRecord], seed: int
) -> list[TileRecord]:
    """Globally downsample labeled records to equal per-class counts.

    Keeps min-class-count records per class, chosen uniformly with the seed,
    preserving the input order. Unlabeled records are dropped.
    """
    by_class: dict[int, list[int]] = {}
    for idx, rec in enumerate(records):
        if rec.label is not None:
            by_class.setdefault(rec.label, []).append(idx)
    if not by_class:
        return []
    target = min(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    keep: set[int] = set()
    for label in sorted(by_class):
        idxs = by_class[label]
        chosen = rng.choice(len(idxs), size=target, replace=False)
        keep.update(idxs[i] for i in chosen)
    return [rec for idx, rec in enumerate(records) if idx in keep]


# ---------------------------------------------------------------------------
# batching

@dataclass(frozen=True)
class Batch:
    targets: np.ndarray  # (n, 3, H, W) full-resolution tiles
    crops: np.ndarray  # (n, 3, H/2, W/2) centered half-size crops
    labels: np.ndarray  # (n,) int64, -1 where the label is absent


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic permutation of n items keyed by (seed, epoch)."""
    return np.random.default_rng((seed, epoch)).permutation(n)


def batch_iterator(
    manifest: Manifest,
    split: str,
    batch_size: int,
    seed: int,
    epoch: int,
    cache: dict[str, np.ndarray] | None = None,
) -> Iterator[Batch]:
    """Yield deterministic (targets, crops, labels) batches for one epoch.

    The shuffle is a pure function of (seed, epoch); the final short batch
    is yielded. An empty split yields nothing.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    records = manifest.split_records(split)
    if not records:
        return
    order = epoch_order(len(records), seed, epoch)
    for start in range(0, len(order), batch_size):
        chunk = [records[i] for i in order[start : start + batch_size]]
        targets = np.stack([_load_cached(manifest, rec, cache) for rec in chunk])
        crops = np.stack([center_crop(t) for t in targets])
        labels = np.array(
            [-1 if rec.label is None else rec.label for rec in chunk],
            dtype=np.int64,
        )
        yield Batch(targets=targets, crops=crops, labels=labels)


def _load_cached(
    manifest: Manifest, record: TileRecord, cache: dict[str, np.ndarray] | None
) -> np.ndarray:
    if cache is None:
        return load_image_tensor(manifest.resolve_path(record))
    key = record.image_path
    if key not in cache:
        cache[key] = load_image_tensor(manifest.resolve_path(record))
    return cache[key]
