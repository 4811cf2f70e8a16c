"""Binary checkpoint container: bit-exact round trips, corruption handling."""

import numpy as np
import pytest

from spatialgnn import DataError, load_checkpoint, save_checkpoint


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(130)
    arrays = {
        "w": rng.normal(size=(3, 4)).astype(np.float32),
        "b": rng.normal(size=(7,)),
        "step": np.array(42, dtype=np.int64),
        "mask": rng.integers(0, 2, size=(2, 5)).astype(np.uint8),
    }
    meta = {"kind": "test", "note": "unicode ✓", "nested": {"a": [1, 2]}}
    path = tmp_path / "state.ckpt"
    save_checkpoint(path, arrays, meta)
    back_arrays, back_meta = load_checkpoint(path)
    assert back_meta["kind"] == "test" and back_meta["nested"] == {"a": [1, 2]}
    assert set(back_arrays) == set(arrays)
    for name, arr in arrays.items():
        assert back_arrays[name].dtype == arr.dtype
        assert back_arrays[name].shape == arr.shape
        # compare raw bytes: NaN-safe and proves float bit patterns survive
        assert back_arrays[name].tobytes() == arr.tobytes()


def test_special_float_values_survive(tmp_path):
    arrays = {"x": np.array([np.inf, -np.inf, np.nan, -0.0, 1e-300])}
    path = tmp_path / "f.ckpt"
    save_checkpoint(path, arrays, {})
    back, _ = load_checkpoint(path)
    assert back["x"].tobytes() == arrays["x"].tobytes()


def test_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_rejects_truncated_payload(tmp_path):
    path = tmp_path / "trunc.ckpt"
    save_checkpoint(path, {"w": np.ones((4, 4))}, {})
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_rejects_future_format_version(tmp_path):
    import json
    import struct

    header = json.dumps({"format_version": 99, "meta": {}, "arrays": []}).encode()
    path = tmp_path / "future.ckpt"
    path.write_bytes(b"SGNCKPT1" + struct.pack("<Q", len(header)) + header)
    with pytest.raises(DataError, match="version"):
        load_checkpoint(path)


def test_empty_arrays_allowed(tmp_path):
    path = tmp_path / "empty.ckpt"
    save_checkpoint(path, {}, {"only": "meta"})
    arrays, meta = load_checkpoint(path)
    assert arrays == {} and meta["only"] == "meta"
