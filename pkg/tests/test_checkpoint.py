"""Binary checkpoint format: round-trip identity and corruption detection."""

import struct

import numpy as np
import pytest

from mghl.checkpoint import (MAGIC, VERSION, CheckpointError,
                             deserialize_params, load_checkpoint,
                             save_checkpoint, serialize_params)
from mghl.store import SharedParamStore


def sample_params(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "worker/enc/w": rng.normal(size=(4, 3, 3, 3)),
        "worker/enc/b": rng.normal(size=(4,)),
        "goal_pc/head/w": rng.normal(size=(5, 9)),
        "scalar": np.array(rng.normal()),
    }


def test_round_trip_bitwise():
    params = sample_params()
    back = deserialize_params(serialize_params(params))
    assert sorted(back) == sorted(params)
    for name, arr in params.items():
        assert back[name].shape == np.asarray(arr).shape
        assert np.array_equal(back[name], arr)
        assert back[name].dtype == np.float64


def test_serialization_is_deterministic():
    params = sample_params()
    assert serialize_params(params) == serialize_params(dict(
        reversed(list(params.items()))))


def test_non_contiguous_input_round_trips():
    base = np.arange(24, dtype=np.float64).reshape(4, 6)
    view = base[:, ::2]
    back = deserialize_params(serialize_params({"v": view}))
    assert np.array_equal(back["v"], view)


def test_file_round_trip_through_store(tmp_path):
    params = sample_params(1)
    store = SharedParamStore({k: v for k, v in params.items()})
    path = tmp_path / "checkpoint.bin"
    save_checkpoint(store, str(path))
    loaded = load_checkpoint(str(path))
    for name, arr in store.snapshot().items():
        assert np.array_equal(loaded.snapshot()[name], arr)


def test_save_accepts_plain_mapping(tmp_path):
    path = tmp_path / "c.bin"
    save_checkpoint({"x": np.ones((2, 2))}, str(path))
    assert np.array_equal(load_checkpoint(str(path)).snapshot()["x"],
                          np.ones((2, 2)))


def test_truncated_file_fails_checksum_without_partial_load():
    blob = serialize_params(sample_params())
    for cut in (len(blob) - 1, len(blob) - 9, len(blob) // 2):
        with pytest.raises(CheckpointError) as exc:
            deserialize_params(blob[:cut])
        msg = str(exc.value)
        assert "checksum" in msg or "too short" in msg


def test_flipped_byte_fails_checksum():
    blob = bytearray(serialize_params(sample_params()))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        deserialize_params(bytes(blob))


def test_bad_magic_reported():
    blob = bytearray(serialize_params(sample_params()))
    blob[:4] = b"XXXX"
    with pytest.raises(CheckpointError, match="magic"):
        deserialize_params(bytes(blob))


def test_version_bump_reports_mismatch():
    blob = bytearray(serialize_params(sample_params()))
    struct.pack_into("<H", blob, 4, VERSION + 1)
    # keep the checksum valid so the version check is what fires
    struct.pack_into("<I", blob, len(blob) - 4,
                     __import__("zlib").crc32(bytes(blob[:-4])))
    with pytest.raises(CheckpointError, match="version mismatch"):
        deserialize_params(bytes(blob))


def test_version_checked_before_checksum():
    blob = bytearray(serialize_params(sample_params()))
    struct.pack_into("<H", blob, 4, VERSION + 1)
    with pytest.raises(CheckpointError, match="version mismatch"):
        deserialize_params(bytes(blob))


def test_trailing_garbage_rejected():
    params = sample_params()
    blob = bytearray(serialize_params(params))
    # append an extra tensor's worth of bytes and refresh count + checksum
    with pytest.raises(CheckpointError):
        deserialize_params(bytes(blob) + b"\x00" * 16)


def test_empty_params_round_trip():
    assert deserialize_params(serialize_params({})) == {}


def test_magic_constant_is_stable():
    blob = serialize_params({})
    assert blob[:4] == MAGIC == b"MGHL"
