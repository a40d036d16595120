import json
import struct

import numpy as np
import pytest

from fieldexpand.checkpoint import (
    MAGIC,
    Checkpoint,
    CheckpointError,
    CheckpointVersionError,
    load_checkpoint,
    save_checkpoint,
)


def make_checkpoint():
    rng = np.random.default_rng(0)
    tensors = {
        "model.encoder.w": rng.normal(size=(4, 3)).astype(np.float32),
        "model.decoder.b": rng.normal(size=(7,)).astype(np.float32),
        "opt.ae.model.encoder.w.exp_avg": rng.normal(size=(4, 3)).astype(np.float32),
    }
    return Checkpoint(
        config={"model": {"latent_dim": 8}},
        config_hash="abc123",
        step=17,
        stage=2,
        alpha=0.75,
        tensors=tensors,
        scalars={"opt.ae.model.encoder.w.step": 17.0},
    )


def test_round_trip_bitwise(tmp_path):
    ckpt = make_checkpoint()
    path = tmp_path / "c.ckpt"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert loaded.step == 17 and loaded.stage == 2 and loaded.alpha == 0.75
    assert loaded.config == ckpt.config
    assert loaded.config_hash == "abc123"
    assert set(loaded.tensors) == set(ckpt.tensors)
    for name in ckpt.tensors:
        assert loaded.tensors[name].dtype == np.float32
        assert np.array_equal(loaded.tensors[name], ckpt.tensors[name])
    assert loaded.scalars == ckpt.scalars


def test_wrong_version_rejected(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(make_checkpoint(), path)
    raw = bytearray(path.read_bytes())
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12 : 12 + hlen].decode())
    header["format_version"] = 99
    new_header = json.dumps(header, sort_keys=True).encode()
    patched = raw[:4] + struct.pack("<Q", len(new_header)) + new_header + raw[12 + hlen :]
    path.write_bytes(patched)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_garbage_file_rejected(tmp_path):
    path = tmp_path / "not_a_checkpoint"
    path.write_bytes(b"PNG garbage that is definitely not " + MAGIC)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(make_checkpoint(), path)
    save_checkpoint(make_checkpoint(), path)  # overwrite in place
    leftovers = [p for p in tmp_path.iterdir() if p.name != "c.ckpt"]
    assert leftovers == []
    assert load_checkpoint(path).step == 17
