import numpy as np
import pytest

from mdnrec.checkpoint import FORMAT_VERSION, load_arrays, save_arrays


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "layer/weight": rng.standard_normal((4, 7)),
        "layer/bias64": rng.standard_normal(3),
        "layer/bias32": rng.standard_normal(5).astype(np.float32),
    }
    path = tmp_path / "model.ckpt"
    save_arrays(path, arrays, meta={"kind": "test", "version_tag": FORMAT_VERSION})
    loaded, meta = load_arrays(path)
    assert meta["kind"] == "test"
    assert set(loaded) == set(arrays)
    for name, arr in arrays.items():
        assert loaded[name].dtype == arr.dtype
        assert np.array_equal(
            loaded[name].view(np.uint8), arr.view(np.uint8)), name


def test_identical_saves_produce_identical_bytes(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float64).reshape(2, 3)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_arrays(p1, arrays, meta={"seed": 1})
    save_arrays(p2, arrays, meta={"seed": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_missing_and_corrupt_files_raise(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_arrays(tmp_path / "missing.ckpt")
    garbage = tmp_path / "bad.ckpt"
    garbage.write_bytes(b"\x00\x01 not a header\n")
    with pytest.raises(ValueError):
        load_arrays(garbage)
    truncated = tmp_path / "short.ckpt"
    save_arrays(truncated, {"a": np.ones(100)})
    data = truncated.read_bytes()
    truncated.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_arrays(truncated)
