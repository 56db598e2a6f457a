"""On-disk formats: named-tensor container, indexed label rasters, and
float rasters.

All payloads are little-endian. The tensor container carries a header
(magic, version, names, shapes) followed by row-major float64 data; the
rasters carry (magic, version, H, W) plus a uint8 or float64 payload.
Label rasters pair with a JSON sidecar mapping indices to class names.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ContractError, SchemaError
from .tensor import Tensor

TENSOR_MAGIC = b"PCTXTNS\x00"
INDEX_MAGIC = b"PCTXIDX\x00"
FLOAT_MAGIC = b"PCTXF64\x00"
VERSION = 1


def _read_exact(fh, n: int, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise SchemaError(f"truncated file while reading {what}")
    return blob


def _check_header(fh, magic: bytes, path) -> None:
    if _read_exact(fh, len(magic), "magic") != magic:
        raise SchemaError(f"{path}: wrong magic, not a {magic!r} file")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != VERSION:
        raise SchemaError(f"{path}: unsupported version {version}")


def save_tensors(path, tensors: Mapping[str, Tensor]) -> None:
    """Write named tensors in insertion order."""
    if not tensors:
        raise ContractError("save_tensors needs at least one tensor")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
        for t in tensors.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_tensors(path) -> dict[str, Tensor]:
    """Read a named-tensor container, preserving file order."""
    with open(path, "rb") as fh:
        _check_header(fh, TENSOR_MAGIC, path)
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        shapes: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "shape"))
            shapes.append((name, shape))
        out: dict[str, Tensor] = {}
        for name, shape in shapes:
            n = int(np.prod(shape))
            blob = _read_exact(fh, 8 * n, f"payload of {name}")
            arr = np.frombuffer(blob, dtype="<f8").reshape(shape)
            out[name] = Tensor(arr)
    return out


@dataclass(frozen=True)
class LabelMap:
    """A (H, W) grid of class indices plus the ordered class names."""

    classes: tuple[str, ...]
    indices: np.ndarray

    def __post_init__(self) -> None:
        if not self.classes:
            raise ContractError("LabelMap needs at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise ContractError(f"class names must be unique: {self.classes}")
        if len(self.classes) > 256:
            raise ContractError("indexed rasters carry at most 256 classes")
        arr = np.asarray(self.indices)
        if arr.ndim != 2:
            raise ContractError(f"label indices must be 2-D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() >= len(self.classes)):
            raise ContractError("label indices out of range for the class list")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "indices", arr)
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def height(self) -> int:
        return self.indices.shape[0]

    @property
    def width(self) -> int:
        return self.indices.shape[1]

    def name_at(self, row: int, col: int) -> str:
        return self.classes[int(self.indices[row, col])]

    def names(self) -> np.ndarray:
        return np.asarray(self.classes, dtype=object)[self.indices]


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_label_map(path, label_map: LabelMap, extra: dict | None = None) -> None:
    """Write the 8-bit indexed raster plus its JSON sidecar."""
    h, w = label_map.indices.shape
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<III", VERSION, h, w))
        fh.write(label_map.indices.tobytes())
    sidecar = {"classes": list(label_map.classes)}
    if extra:
        sidecar.update(extra)
    write_json(sidecar_path(path), sidecar)


def load_label_map(path) -> LabelMap:
    with open(path, "rb") as fh:
        _check_header(fh, INDEX_MAGIC, path)
        h, w = struct.unpack("<II", _read_exact(fh, 8, "extents"))
        payload = _read_exact(fh, h * w, "index payload")
    side = sidecar_path(path)
    if not side.exists():
        raise SchemaError(f"missing sidecar {side} for raster {path}")
    meta = json.loads(side.read_text())
    if "classes" not in meta or not isinstance(meta["classes"], list):
        raise SchemaError(f"sidecar {side} lacks a 'classes' list")
    indices = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return LabelMap(classes=tuple(meta["classes"]), indices=indices)


def save_float_raster(path, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"float rasters are 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FLOAT_MAGIC)
        fh.write(struct.pack("<III", VERSION, arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_float_raster(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _check_header(fh, FLOAT_MAGIC, path)
        h, w = struct.unpack("<II", _read_exact(fh, 8, "extents"))
        payload = _read_exact(fh, 8 * h * w, "float payload")
    return np.frombuffer(payload, dtype="<f8").reshape(h, w).copy()


def write_json(path, obj) -> None:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
