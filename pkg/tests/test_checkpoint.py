"""Checkpoint container: byte-exact round trips and corruption detection."""

from __future__ import annotations

import json

import numpy as np
import pytest

from dnmt import checkpoint as ck


def sample_arrays() -> dict:
    rng = np.random.default_rng(0)
    return {
        "weights": rng.normal(size=(3, 4)).astype(np.float32),
        "bias": rng.normal(size=5),  # float64
        "scalar": np.float32(2.5).reshape(()),
        "empty": np.zeros((0, 3), dtype=np.float32),
    }


def test_round_trip_values_and_dtypes(tmp_path):
    path = tmp_path / "m.ckpt"
    arrays = sample_arrays()
    ck.save_checkpoint(path, arrays, meta={"step": 7})
    loaded, meta = ck.load_checkpoint(path)
    assert meta == {"step": 7}
    assert list(loaded) == list(arrays)
    for name in arrays:
        assert loaded[name].dtype == arrays[name].dtype
        np.testing.assert_array_equal(loaded[name], arrays[name])


def test_resave_is_byte_identical(tmp_path):
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    ck.save_checkpoint(first, sample_arrays(), meta={"k": [1, 2]})
    loaded, meta = ck.load_checkpoint(first)
    ck.save_checkpoint(second, loaded, meta=meta)
    assert first.read_bytes() == second.read_bytes()


def test_header_is_one_json_line(tmp_path):
    path = tmp_path / "m.ckpt"
    ck.save_checkpoint(path, sample_arrays())
    header = json.loads(path.read_bytes().split(b"\n", 1)[0])
    assert header["format_version"] == ck.FORMAT_VERSION
    assert [e["name"] for e in header["arrays"]] == list(sample_arrays())


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(ck.CheckpointError, match="dtype"):
        ck.save_checkpoint(tmp_path / "m.ckpt", {"ids": np.arange(3)})


def test_truncated_file(tmp_path):
    path = tmp_path / "m.ckpt"
    ck.save_checkpoint(path, sample_arrays())
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(ck.CheckpointError, match="truncated"):
        ck.load_checkpoint(path)


def test_trailing_bytes(tmp_path):
    path = tmp_path / "m.ckpt"
    ck.save_checkpoint(path, sample_arrays())
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(ck.CheckpointError, match="trailing"):
        ck.load_checkpoint(path)


def test_garbage_header(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"not json\n")
    with pytest.raises(ck.CheckpointError, match="header"):
        ck.load_checkpoint(path)


def test_wrong_format_version(tmp_path):
    path = tmp_path / "m.ckpt"
    header = {"format_version": 99, "meta": {}, "arrays": []}
    path.write_bytes(json.dumps(header).encode() + b"\n")
    with pytest.raises(ck.CheckpointError, match="version"):
        ck.load_checkpoint(path)


def test_unsupported_dtype_in_header(tmp_path):
    path = tmp_path / "m.ckpt"
    header = {"format_version": 1, "meta": {},
              "arrays": [{"name": "x", "shape": [1], "dtype": "int64"}]}
    path.write_bytes(json.dumps(header).encode() + b"\n" + b"\x00" * 8)
    with pytest.raises(ck.CheckpointError, match="dtype"):
        ck.load_checkpoint(path)
