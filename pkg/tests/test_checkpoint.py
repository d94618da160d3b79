import numpy as np
import pytest

from edgeflow import checkpoint as ck
from edgeflow.rng import Rng


def _random_entries(seed):
    rng = Rng(seed)
    return {
        "scalarish": np.array(rng.uniforms(1)),
        "enc.stage1.w": np.array(rng.uniforms(2 * 3 * 3)).reshape(2, 3, 3),
        "enc.stage1.b": np.array(rng.uniforms(2)),
        "deep.rank5": np.array(rng.uniforms(2 * 2 * 2 * 2 * 2)).reshape(2, 2, 2, 2, 2),
        "unicode-näme": np.array(rng.uniforms(4)),
    }


def test_roundtrip_bitwise(tmp_path):
    path = tmp_path / "model.ckpt"
    entries = _random_entries(3)
    ck.save(path, entries)
    loaded = ck.load(path)
    assert list(loaded.keys()) == list(entries.keys())
    for name, arr in entries.items():
        assert loaded[name].shape == arr.shape
        assert np.array_equal(loaded[name], arr)
        assert loaded[name].tobytes() == arr.tobytes()


def test_file_starts_with_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    ck.save(path, {"a": np.zeros(2)})
    assert open(path, "rb").read(4) == b"X2F1"


def test_double_save_identical_bytes(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    ck.save(p1, _random_entries(9))
    ck.save(p2, _random_entries(9))
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.load(path)


def test_truncation_reports_offset(tmp_path):
    path = tmp_path / "t.ckpt"
    ck.save(path, {"weights": np.ones((3, 3))})
    blob = open(path, "rb").read()
    path.write_bytes(blob[:-4])
    with pytest.raises(ck.CheckpointError, match="byte offset"):
        ck.load(path)


def test_empty_container(tmp_path):
    path = tmp_path / "e.ckpt"
    ck.save(path, {})
    assert ck.load(path) == {}
