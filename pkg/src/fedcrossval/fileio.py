"""File formats: IDX image/label files, NPZ dataset bundles, model files.

IDX is the big-endian MNIST convention: images carry magic 0x00000803 and
a (count, rows, cols) header over unsigned bytes; labels carry magic
0x00000801 and a count.  Loading normalizes pixels to [0, 1].

The model file is a small ASCII header (model kind and dimensions)
followed by the raw parameter vector as little-endian 64-bit floats.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .models import Dataset, ModelSpec, ParameterVector

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MODEL_HEADER = "fedcrossval-model 1"


def _read_exact(f, count: int, offset: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated {what}: wanted {count} bytes, got {len(buf)}",
                          offset=offset + len(buf))
    return buf


def _load_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = _read_exact(f, 16, 0, "image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}",
                offset=0)
        body = _read_exact(f, count * rows * cols, 16, "image data")
        if f.read(1):
            raise FormatError("trailing bytes after image data",
                              offset=16 + count * rows * cols)
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(count, rows * cols)
    return pixels.astype(np.float64) / 255.0


def _load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = _read_exact(f, 8, 0, "label header")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}",
                offset=0)
        body = _read_exact(f, count, 8, "label data")
        if f.read(1):
            raise FormatError("trailing bytes after label data", offset=8 + count)
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair into a Dataset with pixels in [0, 1]."""
    features = _load_idx_images(images_path)
    labels = _load_idx_labels(labels_path)
    if len(labels) != features.shape[0]:
        raise FormatError(
            f"image count {features.shape[0]} != label count {len(labels)}")
    if len(labels) and labels.max() > 9:
        raise FormatError(f"label {labels.max()} outside the 0-9 range")
    return Dataset(features, labels, num_classes=10)


def save_idx(images_path, labels_path, dataset: Dataset, rows: int, cols: int) -> None:
    """Write a Dataset back out as an IDX pair (features must be in [0, 1])."""
    if rows * cols != dataset.input_dim:
        raise InputError(f"rows*cols = {rows * cols} != input_dim {dataset.input_dim}")
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(dataset), rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(dataset)))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def save_dataset_npz(path, train: Dataset, test: Dataset,
                     centers: np.ndarray | None = None) -> None:
    """Bundle train/test splits (and optional cluster centers) into one .npz."""
    arrays = {
        "train_features": train.features,
        "train_labels": train.labels,
        "test_features": test.features,
        "test_labels": test.labels,
        "num_classes": np.int64(train.num_classes),
    }
    if centers is not None:
        arrays["centers"] = centers
    np.savez(path, **arrays)


def load_dataset_npz(path) -> tuple[Dataset, Dataset, np.ndarray | None]:
    with np.load(path) as z:
        required = {"train_features", "train_labels", "test_features",
                    "test_labels", "num_classes"}
        missing = required - set(z.files)
        if missing:
            raise FormatError(f"dataset bundle missing arrays {sorted(missing)}")
        num_classes = int(z["num_classes"])
        train = Dataset(z["train_features"], z["train_labels"], num_classes)
        test = Dataset(z["test_features"], z["test_labels"], num_classes)
        centers = z["centers"] if "centers" in z.files else None
    return train, test, centers


def save_model(path, spec: ModelSpec, params: ParameterVector) -> None:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.param_count,):
        raise InputError("parameter vector does not match the model spec")
    lines = [
        MODEL_HEADER,
        f"kind {spec.kind}",
        f"input_dim {spec.input_dim}",
        f"num_classes {spec.num_classes}",
        f"hidden_dim {spec.hidden_dim if spec.hidden_dim is not None else '-'}",
        f"param_count {spec.param_count}",
        "data",
    ]
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(params.astype("<f8").tobytes())


def load_model(path) -> tuple[ModelSpec, ParameterVector]:
    with open(path, "rb") as f:
        raw = f.read()
    marker = b"\ndata\n"
    cut = raw.find(marker)
    if cut < 0:
        raise FormatError("model file has no data marker")
    header_lines = raw[:cut].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0] != MODEL_HEADER:
        raise FormatError(f"not a model file (bad first line)", offset=0)
    fields = {}
    for line in header_lines[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        hidden = None if fields["hidden_dim"] == "-" else int(fields["hidden_dim"])
        spec = ModelSpec(kind=fields["kind"], input_dim=int(fields["input_dim"]),
                         num_classes=int(fields["num_classes"]), hidden_dim=hidden)
        count = int(fields["param_count"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad model header: {exc}") from exc
    body = raw[cut + len(marker):]
    if len(body) != count * 8:
        raise FormatError(
            f"model body has {len(body)} bytes, expected {count * 8}",
            offset=cut + len(marker) + len(body))
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if count != spec.param_count:
        raise FormatError(
            f"param_count {count} does not match the declared architecture "
            f"({spec.param_count})")
    return spec, params
