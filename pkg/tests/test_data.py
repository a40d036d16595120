import colorsys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldexpand import data as dk


# ---------------------------------------------------------------------------
# otsu

def otsu_brute_force(hist):
    """Exhaustive search over all 256 thresholds (independent oracle)."""
    hist = [float(h) for h in hist]
    total = sum(hist)
    best_t, best_var = 0, -1.0
    for t in range(256):
        w0 = sum(hist[: t + 1])
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            var = 0.0
        else:
            mu0 = sum(i * hist[i] for i in range(t + 1)) / w0
            mu1 = sum(i * hist[i] for i in range(t + 1, 256)) / w1
            var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best_var:
            best_var, best_t = var, t
    return best_t


def test_otsu_two_equal_masses():
    hist = np.zeros(256)
    hist[50] = 10
    hist[200] = 10
    assert dk.otsu_threshold(hist) == 50


def test_otsu_single_bin_degenerate():
    hist = np.zeros(256)
    hist[10] = 7
    assert dk.otsu_threshold(hist) == 10


def test_otsu_uniform_matches_oracle():
    hist = np.ones(256)
    assert dk.otsu_threshold(hist) == otsu_brute_force(hist)


def test_otsu_rejects_empty_histogram():
    with pytest.raises(ValueError):
        dk.otsu_threshold(np.zeros(256))
    with pytest.raises(ValueError):
        dk.otsu_threshold(np.zeros(100))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_otsu_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    hist = rng.integers(0, 50, size=256)
    if hist.sum() == 0:
        hist[rng.integers(0, 256)] = 1
    assert dk.otsu_threshold(hist) == otsu_brute_force(hist)


# ---------------------------------------------------------------------------
# tissue mask

def _to_tensor(rgb_uint8):
    return rgb_uint8.astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0


def saturation_oracle(rgb_uint8):
    """Scalar per-pixel HSV saturation via colorsys, same quantization."""
    h, w, _ = rgb_uint8.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            r, g, b = (rgb_uint8[i, j] / 255.0).tolist()
            s = colorsys.rgb_to_hsv(r, g, b)[1]
            out[i, j] = int(np.floor(s * 255.0 + 0.5))
    return out


def test_tissue_mask_white_image_all_false():
    img = np.full((3, 8, 8), 1.0, dtype=np.float32)
    assert not dk.compute_tissue_mask(img).any()


def test_tissue_mask_half_pink_half_white():
    rgb = np.zeros((8, 8, 3), dtype=np.uint8)
    rgb[:, :4] = (255, 51, 153)  # saturated pink, S = 0.8
    rgb[:, 4:] = (255, 255, 255)
    mask = dk.compute_tissue_mask(_to_tensor(rgb))
    expected = np.zeros((8, 8), dtype=bool)
    expected[:, :4] = True
    assert np.array_equal(mask, expected)


def test_tissue_mask_matches_scalar_oracle():
    rng = np.random.default_rng(7)
    rgb = rng.integers(0, 256, size=(12, 12, 3)).astype(np.uint8)
    sat = saturation_oracle(rgb)
    hist = np.bincount(sat.ravel(), minlength=256)
    expected = sat > otsu_brute_force(hist)
    assert np.array_equal(dk.compute_tissue_mask(_to_tensor(rgb)), expected)


def test_tissue_mask_rejects_non_rgb():
    with pytest.raises(ValueError):
        dk.compute_tissue_mask(np.zeros((1, 4, 4), dtype=np.float32))


# ---------------------------------------------------------------------------
# grid tiling

def window_fraction_oracle(mask, tile, stride):
    h, w = mask.shape
    out = []
    for r in range(0, h - tile + 1, stride):
        for c in range(0, w - tile + 1, stride):
            out.append((r, c, float(mask[r : r + tile, c : c + tile].mean())))
    return out


def test_grid_tiles_exact_tiling():
    mask = np.ones((448, 448), dtype=bool)
    tiles = dk.grid_tiles(mask, 224, 224)
    assert len(tiles) == 4
    assert all(f == 1.0 for _, _, f in tiles)


def test_grid_tiles_corner_block():
    mask = np.zeros((448, 448), dtype=bool)
    mask[:224, :224] = True
    tiles = dk.grid_tiles(mask, 224, 224)
    assert [f for _, _, f in tiles] == [1.0, 0.0, 0.0, 0.0]


def test_grid_tiles_oversized_tile_empty():
    assert dk.grid_tiles(np.ones((10, 10), dtype=bool), 11, 1) == []


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5))
@settings(max_examples=60, deadline=None)
def test_grid_tiles_matches_window_sums(seed, tile, stride):
    rng = np.random.default_rng(seed)
    mask = rng.random((rng.integers(tile, 16), rng.integers(tile, 16))) > 0.5
    got = dk.grid_tiles(mask, tile, stride)
    expected = window_fraction_oracle(mask, tile, stride)
    assert len(got) == len(expected)
    for (r1, c1, f1), (r2, c2, f2) in zip(got, expected):
        assert (r1, c1) == (r2, c2)
        assert f1 == pytest.approx(f2, abs=1e-12)


# ---------------------------------------------------------------------------
# labeling

def test_label_tile_empty_mask():
    assert dk.label_tile(np.zeros((224, 224), dtype=bool), 86) is False


def test_label_tile_center_pixel():
    mask = np.zeros((224, 224), dtype=bool)
    mask[112, 112] = True
    assert dk.label_tile(mask, 86) is True


def test_label_tile_window_boundary():
    # (224 - 86) / 2 = 69, so the window covers rows/cols 69..154
    mask = np.zeros((224, 224), dtype=bool)
    mask[68, 112] = True
    assert dk.label_tile(mask, 86) is False
    mask[:] = False
    mask[69, 112] = True
    assert dk.label_tile(mask, 86) is True


def test_label_tile_parity_mismatch():
    with pytest.raises(ValueError):
        dk.label_tile(np.zeros((224, 224), dtype=bool), 85)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_label_tile_matches_window_scan(seed):
    rng = np.random.default_rng(seed)
    tile = int(rng.integers(4, 24))
    central = int(rng.integers(1, tile + 1))
    central -= (tile - central) % 2
    if central < 1:
        central += 2
    mask = rng.random((tile, tile)) > 0.9
    off = (tile - central) // 2
    expected = bool(mask[off : off + central, off : off + central].any())
    assert dk.label_tile(mask, central) == expected


# ---------------------------------------------------------------------------
# splits

def _records(patients, per_patient=2):
    out = []
    for p in range(patients):
        for t in range(per_patient):
            out.append(
                dk.TileRecord(f"tiles/p{p}_{t}.png", f"p{p:02d}", None, "", 1.0)
            )
    return out


def test_split_ten_patients_largest_remainder():
    manifest = dk.split_by_patient(_records(10), (0.7, 0.15, 0.15), seed=3)
    counts = {
        s: len({r.patient_id for r in manifest.split_records(s)})
        for s in ("train", "val", "test")
    }
    # quotas 7.0/1.5/1.5; the leftover seat goes to the earlier split on a tie
    assert counts == {"train": 7, "val": 2, "test": 1}


def test_split_three_patients_minimum_one():
    manifest = dk.split_by_patient(_records(3), (0.7, 0.15, 0.15), seed=0)
    counts = {
        s: len({r.patient_id for r in manifest.split_records(s)})
        for s in ("train", "val", "test")
    }
    assert counts == {"train": 1, "val": 1, "test": 1}


def test_split_deterministic():
    a = dk.split_by_patient(_records(8), (0.7, 0.15, 0.15), seed=11)
    b = dk.split_by_patient(_records(8), (0.7, 0.15, 0.15), seed=11)
    assert a.records == b.records


def test_split_rejects_bad_inputs():
    with pytest.raises(ValueError):
        dk.split_by_patient(_records(2), (0.7, 0.15, 0.15), seed=0)
    with pytest.raises(ValueError):
        dk.split_by_patient(_records(5), (0.7, 0.15, 0.16), seed=0)
    with pytest.raises(ValueError):
        dk.split_by_patient(_records(5), (1.0, -0.5, 0.5), seed=0)


@given(st.integers(3, 25), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_split_patients_disjoint_and_exhaustive(n_patients, seed):
    manifest = dk.split_by_patient(_records(n_patients), (0.7, 0.15, 0.15), seed)
    groups = [
        {r.patient_id for r in manifest.split_records(s)}
        for s in ("train", "val", "test")
    ]
    assert all(g for g in groups)
    assert not (groups[0] & groups[1] or groups[0] & groups[2] or groups[1] & groups[2])
    assert len(groups[0] | groups[1] | groups[2]) == n_patients


# ---------------------------------------------------------------------------
# cropping

def test_center_crop_halves_paper_size():
    img = np.zeros((3, 224, 224), dtype=np.float32)
    assert dk.center_crop(img).shape == (3, 112, 112)


def test_center_crop_constant():
    img = np.full((3, 4, 4), 0.25, dtype=np.float32)
    crop = dk.center_crop(img)
    assert crop.shape == (3, 2, 2)
    assert np.all(crop == 0.25)


def test_center_crop_index_arithmetic():
    values = np.array([[10 * r + c for c in range(4)] for r in range(4)], dtype=np.float32)
    crop = dk.center_crop(np.stack([values] * 3))
    assert crop[0].tolist() == [[11, 12], [21, 22]]


def test_center_crop_rejects_odd():
    with pytest.raises(ValueError):
        dk.center_crop(np.zeros((3, 5, 4), dtype=np.float32))


@given(st.integers(1, 16))
@settings(max_examples=30, deadline=None)
def test_center_crop_quarter_side(k):
    side = 4 * k
    img = np.zeros((3, side, side), dtype=np.float32)
    twice = dk.center_crop(dk.center_crop(img))
    assert twice.shape == (3, side // 4, side // 4)


# ---------------------------------------------------------------------------
# manifest and batches

def test_manifest_round_trip(tmp_path, corpus_manifest):
    path = tmp_path / "manifest.csv"
    corpus_manifest.save(path)
    loaded = dk.Manifest.load(path)
    assert loaded.records == corpus_manifest.records
    assert loaded.class_names == corpus_manifest.class_names
    assert loaded.seed == corpus_manifest.seed
    assert loaded.tile_size == corpus_manifest.tile_size

    corpus_manifest.save(tmp_path / "again.csv")
    assert (tmp_path / "manifest.csv").read_bytes() == (
        tmp_path / "again.csv"
    ).read_bytes()


def test_batch_iterator_sizes_and_short_batch(corpus_manifest):
    base = corpus_manifest.split_records("train")
    records = [base[i % len(base)] for i in range(35)]
    manifest = dk.Manifest(
        records=records, class_names=[], seed=0, tile_size=32, central_size=16,
        root=corpus_manifest.root,
    )
    sizes = [
        b.targets.shape[0]
        for b in dk.batch_iterator(manifest, "train", 16, seed=0, epoch=0)
    ]
    assert sizes == [16, 16, 3]


def test_batch_iterator_deterministic_and_crop_consistent(corpus_manifest):
    cache = {}
    a = list(dk.batch_iterator(corpus_manifest, "train", 8, seed=4, epoch=2, cache=cache))
    b = list(dk.batch_iterator(corpus_manifest, "train", 8, seed=4, epoch=2, cache=cache))
    assert len(a) == len(b)
    for ba, bb in zip(a, b):
        assert np.array_equal(ba.targets, bb.targets)
        assert np.array_equal(ba.labels, bb.labels)
        for i in range(ba.targets.shape[0]):
            assert np.array_equal(ba.crops[i], dk.center_crop(ba.targets[i]))
    c = list(dk.batch_iterator(corpus_manifest, "train", 8, seed=4, epoch=3, cache=cache))
    assert not all(
        np.array_equal(x.targets, y.targets) for x, y in zip(a, c)
    )


def test_batch_iterator_empty_split(corpus_manifest):
    manifest = dk.Manifest(
        records=[r for r in corpus_manifest.records if r.split == "train"],
        class_names=[],
        seed=0,
        tile_size=32,
        central_size=16,
    )
    assert list(dk.batch_iterator(manifest, "val", 8, seed=0, epoch=0)) == []


def test_downsample_to_balance():
    records = _records(4, per_patient=3)
    labeled = [
        dk.TileRecord(r.image_path, r.patient_id, i % 3 != 0 and 1 or 0, "", 1.0)
        for i, r in enumerate(records)
    ]
    balanced = dk.downsample_to_balance(labeled, seed=0)
    counts = {}
    for r in balanced:
        counts[r.label] = counts.get(r.label, 0) + 1
    assert counts[0] == counts[1]
    again = dk.downsample_to_balance(labeled, seed=0)
    assert balanced == again


# ---------------------------------------------------------------------------
# image round trip

def test_image_tensor_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8)
    from PIL import Image

    Image.fromarray(rgb, "RGB").save(tmp_path / "t.png")
    tensor = dk.load_image_tensor(tmp_path / "t.png")
    assert tensor.shape == (3, 16, 16)
    assert tensor.min() >= -1.0 and tensor.max() <= 1.0
    assert np.array_equal(dk.image_tensor_to_uint8(tensor), rgb)
