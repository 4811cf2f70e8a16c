"""Checkpoint container: named arrays plus a JSON metadata block.

Byte layout (documented contract, version 1):

    offset 0   : 8-byte magic ``b"SGNCKPT1"``
    offset 8   : header length ``n`` as little-endian uint64
    offset 16  : ``n`` bytes of UTF-8 JSON:
                 {"format_version": 1,
                  "meta": {...caller metadata...},
                  "arrays": [{"name": str, "dtype": "<f8"|..., "shape": [...]}]}
    offset 16+n: the arrays' raw bytes, C-order, little-endian, concatenated
                 in header order with no padding.

Floats round-trip bit-exactly, which the resume-equality guarantees rely on.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = b"SGNCKPT1"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        # note: ascontiguousarray would silently promote 0-d arrays to 1-d
        arr = np.asarray(arr, order="C")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
        blobs.append(le.tobytes())
    header = json.dumps({"format_version": FORMAT_VERSION, "meta": meta,
                         "arrays": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != MAGIC:
                raise DataError(f"{path}: not a checkpoint (bad magic {magic!r})")
            raw_len = fh.read(8)
            if len(raw_len) != 8:
                raise DataError(f"{path}: truncated header length")
            n = int.from_bytes(raw_len, "little")
            try:
                header = json.loads(fh.read(n).decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                raise DataError(f"{path}: corrupt header: {exc}") from exc
            if header.get("format_version") != FORMAT_VERSION:
                raise DataError(
                    f"{path}: unsupported checkpoint version {header.get('format_version')!r}"
                )
            arrays = {}
            for entry in header["arrays"]:
                dtype = np.dtype(entry["dtype"])
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = fh.read(count * dtype.itemsize)
                if len(buf) != count * dtype.itemsize:
                    raise DataError(f"{path}: truncated payload for {entry['name']}")
                arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
            return arrays, header.get("meta", {})
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
