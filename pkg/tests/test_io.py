import numpy as np
import pytest

from adaptivf.io import read_fvecs, read_ivecs, write_fvecs, write_ivecs


def test_fvecs_roundtrip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(17, 9)).astype(np.float32)
    path = tmp_path / "x.fvecs"
    write_fvecs(path, arr)
    np.testing.assert_array_equal(read_fvecs(path), arr)


def test_ivecs_roundtrip(tmp_path):
    arr = np.random.default_rng(1).integers(0, 1000, size=(5, 11)).astype(np.int32)
    path = tmp_path / "x.ivecs"
    write_ivecs(path, arr)
    np.testing.assert_array_equal(read_ivecs(path), arr)


def test_truncated_file_raises(tmp_path):
    arr = np.zeros((3, 4), dtype=np.float32)
    path = tmp_path / "x.fvecs"
    write_fvecs(path, arr)
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(ValueError, match="truncated"):
        read_fvecs(path)


def test_inconsistent_dimension_raises(tmp_path):
    path = tmp_path / "x.fvecs"
    rec1 = np.array([2], dtype="<i4").tobytes() + np.zeros(2, dtype="<f4").tobytes()
    rec2 = np.array([5], dtype="<i4").tobytes() + np.zeros(2, dtype="<f4").tobytes()
    path.write_bytes(rec1 + rec2)
    with pytest.raises(ValueError):
        read_fvecs(path)


def test_known_byte_layout(tmp_path):
    path = tmp_path / "x.fvecs"
    write_fvecs(path, np.array([[1.0, 2.0]], dtype=np.float32))
    raw = np.frombuffer(path.read_bytes(), dtype="<i4")
    assert raw[0] == 2
    assert np.frombuffer(raw[1:].tobytes(), dtype="<f4").tolist() == [1.0, 2.0]
