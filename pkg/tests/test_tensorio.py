import struct

import numpy as np
import pytest

from fsdetr import tensorio


def test_layout():
    blob = tensorio.encode(np.array([[1.0, 2.0, 3.0]]))
    assert blob[:8] == b"FSDTENSR"
    assert struct.unpack("<III", blob[8:20]) == (2, 1, 3)
    np.testing.assert_array_equal(np.frombuffer(blob[20:], "<f4"), [1, 2, 3])


def test_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((2, 3, 4)).astype(np.float32)
    tensorio.save(tmp_path / "a.fsdt", a)
    b = tensorio.load(tmp_path / "a.fsdt")
    assert b.dtype == np.float64 and b.shape == a.shape
    np.testing.assert_array_equal(b, a)


def test_bad_magic_and_length():
    blob = tensorio.encode(np.ones(4))
    with pytest.raises(ValueError):
        tensorio.decode(b"XXXXXXXX" + blob[8:])
    with pytest.raises(ValueError):
        tensorio.decode(blob[:-2])
