"""Model interchange bundle and calibration-set I/O.

A bundle is a directory holding ``model.json`` (manifest) and ``weights.bin``
(concatenated raw little-endian float32 tensors, row-major).  Calibration and
evaluation sets use the analogous ``calib.json`` + ``calib.bin`` pair.  Byte
offsets in manifests are ascending and non-overlapping; the reader checks
both plus blob bounds, so a truncated or shuffled export fails loudly instead
of yielding garbage weights.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import model as m
from .errors import (
    CalibrationError,
    ManifestError,
    OffsetError,
    TruncatedBlobError,
    UnknownLayerKindError,
    UnsupportedVersionError,
)

FORMAT_VERSION = "1.0"

_MANIFEST_NAME = "model.json"
_BLOB_NAME = "weights.bin"


@dataclass
class CalibrationSet:
    """Calibration or evaluation samples: ``inputs [n, *shape]`` float32,
    optional integer labels of length n."""

    inputs: np.ndarray
    labels: list[int] | None = None

    @property
    def count(self) -> int:
        return int(self.inputs.shape[0])


def _major_version(version: str) -> int:
    try:
        return int(str(version).split(".")[0])
    except (ValueError, AttributeError):
        raise ManifestError(f"unparsable format_version {version!r}")


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise ManifestError(f"{where}: missing required field {key!r}")
    return entry[key]


class _BlobReader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.path = path
        self.prev_end = -1

    def tensor(self, offset: int, shape: tuple[int, ...], where: str) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset < 0 or offset + nbytes > len(self.blob):
            raise TruncatedBlobError(
                f"{where}: tensor at offset {offset} (+{nbytes} bytes) exceeds "
                f"blob length {len(self.blob)} in {self.path}")
        if offset < self.prev_end:
            raise OffsetError(
                f"{where}: offset {offset} overlaps or precedes previous tensor "
                f"(ends at {self.prev_end})")
        self.prev_end = offset + nbytes
        arr = np.frombuffer(self.blob, dtype="<f4", count=count, offset=offset)
        return arr.reshape(shape).copy()


def _layer_from_entry(entry: dict, reader: _BlobReader, index: int) -> m.Layer:
    where = f"layer {index}"
    kind = _require(entry, "kind", where)
    if kind not in m.SUPPORTED_KINDS:
        raise UnknownLayerKindError(f"{where}: unsupported layer kind {kind!r}")
    if kind == "conv2d":
        wshape = tuple(_require(entry, "weight_shape", where))
        bshape = tuple(_require(entry, "bias_shape", where))
        w = reader.tensor(_require(entry, "weight_offset", where), wshape, where)
        b = reader.tensor(_require(entry, "bias_offset", where), bshape, where)
        return m.conv2d(w, b, stride=int(entry.get("stride", 1)),
                        padding=int(entry.get("padding", 0)))
    if kind == "linear":
        wshape = tuple(_require(entry, "weight_shape", where))
        bshape = tuple(_require(entry, "bias_shape", where))
        w = reader.tensor(_require(entry, "weight_offset", where), wshape, where)
        b = reader.tensor(_require(entry, "bias_offset", where), bshape, where)
        return m.linear(w, b)
    if kind == "batchnorm2d":
        n = (int(_require(entry, "num_features", where)),)
        g = reader.tensor(_require(entry, "gamma_offset", where), n, where)
        b = reader.tensor(_require(entry, "beta_offset", where), n, where)
        mu = reader.tensor(_require(entry, "mean_offset", where), n, where)
        var = reader.tensor(_require(entry, "var_offset", where), n, where)
        return m.batchnorm2d(g, b, mu, var, epsilon=float(entry.get("epsilon", 1e-5)))
    if kind in ("maxpool2d", "avgpool2d"):
        kernel = int(_require(entry, "kernel", where))
        stride = int(entry.get("stride", kernel))
        return m.maxpool2d(kernel, stride) if kind == "maxpool2d" else m.avgpool2d(kernel, stride)
    if kind == "relu":
        return m.relu()
    return m.flatten()


def load_bundle(path: str) -> m.AnnModel:
    """Read ``model.json`` + ``weights.bin`` from a bundle directory."""
    manifest_path = os.path.join(path, _MANIFEST_NAME)
    blob_path = os.path.join(path, _BLOB_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"missing manifest {manifest_path}")
    except json.JSONDecodeError as exc:
        raise ManifestError(f"unparsable manifest {manifest_path}: {exc}")
    major = _major_version(_require(manifest, "format_version", "manifest"))
    if major != _major_version(FORMAT_VERSION):
        raise UnsupportedVersionError(
            f"manifest format_version {manifest['format_version']!r} has major "
            f"version {major}; this reader supports major {_major_version(FORMAT_VERSION)}")
    try:
        with open(blob_path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise TruncatedBlobError(f"missing weight blob {blob_path}")
    reader = _BlobReader(blob, blob_path)
    layers = [_layer_from_entry(entry, reader, i)
              for i, entry in enumerate(_require(manifest, "layers", "manifest"))]
    ann = m.AnnModel(layers, tuple(_require(manifest, "input_shape", "manifest")))
    m.validate_shapes(ann)
    return ann


def _tensor_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_bundle(ann: m.AnnModel, path: str) -> None:
    """Write a bundle directory; ``load_bundle(save_bundle(m))`` is bit-exact."""
    m.validate_shapes(ann)
    os.makedirs(path, exist_ok=True)
    chunks: list[bytes] = []
    offset = 0

    def put(arr: np.ndarray) -> int:
        nonlocal offset
        raw = _tensor_bytes(arr)
        chunks.append(raw)
        start = offset
        offset += len(raw)
        return start

    entries = []
    for layer in ann.layers:
        k = layer.kind
        entry: dict = {"kind": k}
        if k in ("conv2d", "linear"):
            entry["weight_shape"] = list(layer.weight.shape)
            entry["bias_shape"] = list(layer.bias.shape)
            entry["weight_offset"] = put(layer.weight)
            entry["bias_offset"] = put(layer.bias)
            if k == "conv2d":
                entry["stride"] = layer.stride
                entry["padding"] = layer.padding
        elif k == "batchnorm2d":
            entry["num_features"] = int(layer.gamma.shape[0])
            entry["gamma_offset"] = put(layer.gamma)
            entry["beta_offset"] = put(layer.beta)
            entry["mean_offset"] = put(layer.running_mean)
            entry["var_offset"] = put(layer.running_var)
            entry["epsilon"] = layer.epsilon
        elif k in ("maxpool2d", "avgpool2d"):
            entry["kernel"] = layer.kernel
            entry["stride"] = layer.stride
        entries.append(entry)

    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(ann.input_shape),
        "layers": entries,
    }
    with open(os.path.join(path, _MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(path, _BLOB_NAME), "wb") as fh:
        fh.write(b"".join(chunks))


def load_calibration(path: str, expected_shape: tuple[int, ...] | None = None) -> CalibrationSet:
    """Read a ``calib.json`` descriptor plus its raw float32 payload.

    ``path`` may point at the descriptor file or at a directory containing
    ``calib.json``.  When ``expected_shape`` is given, per-sample dims must
    match it.
    """
    desc_path = os.path.join(path, "calib.json") if os.path.isdir(path) else path
    try:
        with open(desc_path, "r", encoding="utf-8") as fh:
            desc = json.load(fh)
    except FileNotFoundError:
        raise CalibrationError(f"missing calibration descriptor {desc_path}")
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"unparsable calibration descriptor {desc_path}: {exc}")
    count = int(_require(desc, "count", "calibration"))
    shape = tuple(int(d) for d in _require(desc, "shape", "calibration"))
    dtype = desc.get("dtype", "float32")
    if dtype != "float32":
        raise CalibrationError(f"unsupported calibration dtype {dtype!r}")
    if count < 1:
        raise CalibrationError(f"calibration set must hold at least one sample, got {count}")
    if expected_shape is not None and shape != tuple(expected_shape):
        raise CalibrationError(
            f"calibration sample shape {shape} does not match expected {tuple(expected_shape)}")
    data_file = desc.get("data_file", "calib.bin")
    data_path = os.path.join(os.path.dirname(desc_path), data_file)
    raw = np.fromfile(data_path, dtype="<f4")
    per = int(np.prod(shape))
    if raw.size != count * per:
        raise CalibrationError(
            f"calibration payload holds {raw.size} values, descriptor promises "
            f"{count} x {per}")
    labels = desc.get("labels")
    if labels is not None:
        labels = [int(x) for x in labels]
        if len(labels) != count:
            raise CalibrationError(
                f"{len(labels)} labels for {count} samples")
    return CalibrationSet(raw.reshape((count,) + shape).copy(), labels)


def save_calibration(calib: CalibrationSet, path: str, name: str = "calib") -> None:
    os.makedirs(path, exist_ok=True)
    desc = {
        "format_version": FORMAT_VERSION,
        "count": calib.count,
        "shape": list(calib.inputs.shape[1:]),
        "dtype": "float32",
        "data_file": f"{name}.bin",
    }
    if calib.labels is not None:
        desc["labels"] = list(calib.labels)
    with open(os.path.join(path, f"{name}.json"), "w", encoding="utf-8") as fh:
        json.dump(desc, fh)
        fh.write("\n")
    np.ascontiguousarray(calib.inputs, dtype="<f4").tofile(os.path.join(path, f"{name}.bin"))
