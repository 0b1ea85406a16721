import hashlib
import struct

import numpy as np
import pytest

from neurove.checkpoint import (
    CONFIG_VERSION,
    MAGIC,
    Checkpoint,
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)


def sample():
    rng = np.random.default_rng(0)
    return Checkpoint(
        "demo",
        {"hidden": 4, "layers": [1, 2]},
        {"a": rng.normal(size=(2, 3)), "b": np.arange(5.0), "scalar": np.array(1.5)},
        {"epoch": 3},
    )


def test_round_trip(tmp_path):
    ck = sample()
    save_checkpoint(ck, tmp_path / "x.ckpt")
    back = load_checkpoint(tmp_path / "x.ckpt")
    assert back.kind == "demo" and back.config == ck.config and back.meta == ck.meta
    for k, v in ck.tensors.items():
        assert back.tensors[k].shape == np.shape(v)
        np.testing.assert_array_equal(back.tensors[k], np.asarray(v, dtype=np.float32))
    assert not (tmp_path / "x.ckpt.tmp").exists()


def test_layout_is_little_endian_float32():
    raw = encode_checkpoint(Checkpoint("k", {}, {"w": np.array([1.0, -2.0])}))
    assert raw[:4] == MAGIC
    _, hlen = struct.unpack("<II", raw[4:12])
    assert raw[12 + hlen : -32] == struct.pack("<ff", 1.0, -2.0)
    assert raw[-32:] == hashlib.sha256(raw[:-32]).digest()


def test_encoding_is_deterministic():
    assert encode_checkpoint(sample()) == encode_checkpoint(sample())


def test_corruption_detected():
    raw = bytearray(encode_checkpoint(sample()))
    raw[40] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(bytes(raw))
    with pytest.raises(CheckpointError):
        decode_checkpoint(bytes(raw[:-5]))
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"garbage" * 10)


def test_config_version_mismatch_fails_loudly():
    raw = encode_checkpoint(Checkpoint("k", {}, {}, config_version=CONFIG_VERSION + 1))
    with pytest.raises(CheckpointError, match="config version"):
        decode_checkpoint(raw)
    assert decode_checkpoint(raw, expect_config_version=None).config_version == CONFIG_VERSION + 1


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")
