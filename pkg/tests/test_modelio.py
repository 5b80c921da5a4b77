"""Binary model files."""

import hashlib
import struct

import numpy as np
import pytest

from shapespace.errors import ChecksumError, ModelFormatError, ModelKindError, VersionMismatchError
from shapespace.modelio import load_model, save_model


def test_global_round_trip_is_bit_exact(tmp_path, global_model):
    back = load_model(save_model(global_model, tmp_path / "g.bin"), kind="global")
    for name in ("mean", "basis", "eigenvalues", "spectrum"):
        np.testing.assert_array_equal(getattr(back, name), getattr(global_model, name))
    assert back.grid_dims == global_model.grid_dims
    assert back.landmark_ids == global_model.landmark_ids


def test_local_round_trip_is_bit_exact(tmp_path, local_model):
    back = load_model(save_model(local_model, tmp_path / "l.bin"))
    assert back.kind == "local"
    assert back.hierarchy == local_model.hierarchy
    for name in ("means", "rotations", "stddevs"):
        np.testing.assert_array_equal(getattr(back, name), getattr(local_model, name))
    np.testing.assert_array_equal(back.mean_shape, local_model.mean_shape)


def test_saving_twice_gives_identical_bytes(tmp_path, global_model):
    a = save_model(global_model, tmp_path / "a.bin").read_bytes()
    b = save_model(global_model, tmp_path / "b.bin").read_bytes()
    assert a == b


def test_corruption_is_detected(tmp_path, global_model):
    path = save_model(global_model, tmp_path / "g.bin")
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        load_model(path)


def test_truncation_is_detected(tmp_path, global_model):
    path = save_model(global_model, tmp_path / "g.bin")
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(ChecksumError):
        load_model(path)
    path.write_bytes(b"SHAPESPC")
    with pytest.raises(ChecksumError):
        load_model(path)


def test_wrong_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTAMODEL" + bytes(64))
    with pytest.raises(ModelFormatError) as err:
        load_model(path)
    assert not isinstance(err.value, ChecksumError)


def test_unsupported_version(tmp_path, global_model):
    path = save_model(global_model, tmp_path / "g.bin")
    body = bytearray(path.read_bytes()[:-32])
    struct.pack_into("<H", body, 8, 99)
    path.write_bytes(bytes(body) + hashlib.sha256(bytes(body)).digest())
    with pytest.raises(VersionMismatchError):
        load_model(path)


def test_kind_is_checked(tmp_path, local_model):
    path = save_model(local_model, tmp_path / "l.bin")
    with pytest.raises(ModelKindError):
        load_model(path, kind="global")
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "missing.bin")
