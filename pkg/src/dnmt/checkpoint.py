"""Checkpoint container: one JSON header line, then raw little-endian arrays.

The header records format version, metadata, and the name/shape/dtype of
every array in order; array bytes follow in exactly that order. Loading
and re-saving a checkpoint reproduces the file byte for byte.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    """Malformed or inconsistent checkpoint file."""


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays and JSON-serializable metadata to one file."""
    entries = []
    blobs = []
    for name, array in arrays.items():
        array = np.asarray(array)
        dtype_name = array.dtype.name
        if dtype_name not in _DTYPES:
            raise CheckpointError(
                f"array {name!r} has unsupported dtype {dtype_name}; "
                f"supported: {sorted(_DTYPES)}")
        entries.append({"name": name, "shape": list(array.shape), "dtype": dtype_name})
        blobs.append(np.ascontiguousarray(array, dtype=_DTYPES[dtype_name]).tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "arrays": entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple:
    """Read a checkpoint; returns (arrays dict in header order, meta dict)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
        if not isinstance(header, dict) or "format_version" not in header:
            raise CheckpointError("checkpoint header missing format_version")
        if header["format_version"] != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format version {header['format_version']}")
        arrays = {}
        for entry in header.get("arrays", []):
            name, shape, dtype_name = entry["name"], tuple(entry["shape"]), entry["dtype"]
            if dtype_name not in _DTYPES:
                raise CheckpointError(f"array {name!r} has unsupported dtype {dtype_name}")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            dt = np.dtype(_DTYPES[dtype_name])
            blob = fh.read(count * dt.itemsize)
            if len(blob) != count * dt.itemsize:
                raise CheckpointError(f"checkpoint truncated while reading {name!r}")
            arrays[name] = np.frombuffer(blob, dtype=dt).reshape(shape).astype(
                dtype_name, copy=True)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after the last declared array")
    return arrays, header.get("meta", {})
