import struct

import numpy as np
import pytest

from fedcrossval.data import synth_dataset
from fedcrossval.errors import FormatError, InputError
from fedcrossval.fileio import (load_dataset_npz, load_idx, load_model,
                                save_dataset_npz, save_idx, save_model)
from fedcrossval.models import Dataset, ModelSpec, init_model


def mnist_like(n=30, rows=4, cols=5, seed=0):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, (n, rows * cols)).astype(np.float64) / 255.0
    labels = rng.integers(0, 10, n)
    return Dataset(pixels, labels, 10), rows, cols


class TestIdx:
    def test_round_trip(self, tmp_path):
        data, rows, cols = mnist_like()
        save_idx(tmp_path / "img", tmp_path / "lab", data, rows, cols)
        loaded = load_idx(tmp_path / "img", tmp_path / "lab")
        assert len(loaded) == len(data)
        assert loaded.input_dim == rows * cols
        assert np.allclose(loaded.features, data.features, atol=1 / 510)
        assert np.array_equal(loaded.labels, data.labels)
        assert loaded.features.min() >= 0 and loaded.features.max() <= 1

    def test_bad_magic(self, tmp_path):
        data, rows, cols = mnist_like()
        save_idx(tmp_path / "img", tmp_path / "lab", data, rows, cols)
        raw = bytearray((tmp_path / "img").read_bytes())
        raw[3] = 0x99
        (tmp_path / "img").write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_truncated_reports_offset(self, tmp_path):
        data, rows, cols = mnist_like()
        save_idx(tmp_path / "img", tmp_path / "lab", data, rows, cols)
        raw = (tmp_path / "img").read_bytes()
        (tmp_path / "img").write_bytes(raw[:-7])
        with pytest.raises(FormatError, match="offset") as exc:
            load_idx(tmp_path / "img", tmp_path / "lab")
        assert exc.value.offset == len(raw) - 7

    def test_count_mismatch(self, tmp_path):
        data, rows, cols = mnist_like()
        save_idx(tmp_path / "img", tmp_path / "lab", data, rows, cols)
        short = data.subset(np.arange(len(data) - 1))
        save_idx(tmp_path / "img2", tmp_path / "lab2", short, rows, cols)
        with pytest.raises(FormatError, match="count"):
            load_idx(tmp_path / "img", tmp_path / "lab2")

    def test_header_constants(self, tmp_path):
        data, rows, cols = mnist_like(n=3)
        save_idx(tmp_path / "img", tmp_path / "lab", data, rows, cols)
        magic, count, r, c = struct.unpack(">IIII", (tmp_path / "img").read_bytes()[:16])
        assert (magic, count, r, c) == (0x00000803, 3, rows, cols)
        magic, count = struct.unpack(">II", (tmp_path / "lab").read_bytes()[:8])
        assert (magic, count) == (0x00000801, 3)


class TestNpz:
    def test_round_trip_with_centers(self, tmp_path):
        train = synth_dataset(3, 4, 20, 6.0, 1.0, seed=0)
        test = synth_dataset(3, 4, 5, 6.0, 1.0, seed=0, split="test")
        centers = np.zeros((3, 1, 4))
        path = tmp_path / "bundle.npz"
        save_dataset_npz(path, train, test, centers)
        train2, test2, centers2 = load_dataset_npz(path)
        assert np.array_equal(train.features, train2.features)
        assert np.array_equal(test.labels, test2.labels)
        assert np.array_equal(centers, centers2)

    def test_missing_arrays_rejected(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, foo=np.zeros(3))
        with pytest.raises(FormatError, match="missing"):
            load_dataset_npz(path)


class TestModelFile:
    @pytest.mark.parametrize("spec", [
        ModelSpec("softmax-linear", 7, 4),
        ModelSpec("mlp-1hidden", 5, 3, hidden_dim=6),
    ])
    def test_round_trip(self, tmp_path, spec):
        params = init_model(spec, 42)
        path = tmp_path / "model.bin"
        save_model(path, spec, params)
        spec2, params2 = load_model(path)
        assert spec2 == spec
        assert np.array_equal(params, params2)

    def test_little_endian_payload(self, tmp_path):
        spec = ModelSpec("softmax-linear", 2, 2)
        params = np.arange(spec.param_count, dtype=np.float64)
        save_model(tmp_path / "m.bin", spec, params)
        raw = (tmp_path / "m.bin").read_bytes()
        body = raw[raw.find(b"\ndata\n") + 6:]
        assert np.array_equal(np.frombuffer(body, dtype="<f8"), params)

    def test_wrong_length_rejected(self, tmp_path):
        spec = ModelSpec("softmax-linear", 2, 2)
        save_model(tmp_path / "m.bin", spec, init_model(spec, 0))
        raw = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "m.bin").write_bytes(raw[:-8])
        with pytest.raises(FormatError, match="bytes"):
            load_model(tmp_path / "m.bin")

    def test_dim_mismatch_rejected(self, tmp_path):
        spec = ModelSpec("softmax-linear", 2, 2)
        with pytest.raises(InputError):
            save_model(tmp_path / "m.bin", spec, np.zeros(5))
