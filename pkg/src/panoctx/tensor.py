"""Dense float64 tensors, feature maps, and the primitive operations
every higher-level module composes.

Tensors are immutable after construction and all operations are pure
functions. When a gradient tape (:mod:`panoctx.autodiff`) or an affinity
ledger (:mod:`panoctx.audit`) is active on the current thread, operations
notify it as a side channel; the numeric path is identical either way.
"""
from __future__ import annotations

import threading
from typing import Sequence

import numpy as np

from .audit import active_ledger
from .errors import DimensionError, GeometryError, NumericError

_MIN_RANK = 1
_MAX_RANK = 4

_TRACE = threading.local()


def _tape():
    stack = getattr(_TRACE, "tapes", None)
    return stack[-1] if stack else None


def _push_tape(tape) -> None:
    stack = getattr(_TRACE, "tapes", None)
    if stack is None:
        stack = _TRACE.tapes = []
    stack.append(tape)


def _pop_tape(tape) -> None:
    stack = getattr(_TRACE, "tapes", [])
    if not stack or stack[-1] is not tape:
        raise RuntimeError("tape stack corrupted: pop does not match push")
    stack.pop()


def _record(op: str, inputs, output, **ctx) -> None:
    tape = _tape()
    if tape is not None:
        tape.record(op, inputs, output, ctx)


def _check_extents(shape: tuple[int, ...]) -> None:
    if not (_MIN_RANK <= len(shape) <= _MAX_RANK):
        raise DimensionError(f"rank must be 1..4, got shape {shape}")
    if any(e < 1 for e in shape):
        raise DimensionError(f"all extents must be >= 1, got shape {shape}")


class Tensor:
    """Immutable row-major float64 array of rank 1 to 4."""

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64, order="C")
        _check_extents(arr.shape)
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _adopt(cls, arr: np.ndarray) -> "Tensor":
        # Fast path for freshly computed arrays: no defensive copy.
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        _check_extents(arr.shape)
        arr.setflags(write=False)
        out = object.__new__(cls)
        out._data = arr
        return out

    @property
    def data(self) -> np.ndarray:
        """Read-only numpy view of the underlying buffer."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        if self._data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __array__(self, dtype=None, copy=None):
        if dtype is not None and dtype != self._data.dtype:
            return self._data.astype(dtype)
        return self._data

    def tolist(self):
        return self._data.tolist()

    def __getitem__(self, idx):
        return self._data[idx]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class FeatureMap:
    """A (channels, height, width) tensor with named spatial axes."""

    __slots__ = ("_values",)

    def __init__(self, values: Tensor) -> None:
        if not isinstance(values, Tensor):
            values = Tensor(values)
        if values.ndim != 3:
            raise DimensionError(f"feature map needs rank 3, got shape {values.shape}")
        self._values = values

    @property
    def values(self) -> Tensor:
        return self._values

    @property
    def channels(self) -> int:
        return self._values.shape[0]

    @property
    def height(self) -> int:
        return self._values.shape[1]

    @property
    def width(self) -> int:
        return self._values.shape[2]

    def __repr__(self) -> str:
        return f"FeatureMap(C={self.channels}, H={self.height}, W={self.width})"


# ---------------------------------------------------------------------------
# rank-2 primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors.

    Reports m*k*n multiply-accumulates to the active affinity ledger.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    out = Tensor._adopt(a.data @ b.data)
    ledger = active_ledger()
    if ledger is not None:
        m, k = a.shape
        ledger.add_macs(m * k * b.shape[1])
    _record("matmul", (a, b), out)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a rank-2 tensor, computed with max-subtraction."""
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows needs rank 2, got shape {a.shape}")
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax_rows: input contains non-finite values")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor._adopt(e / e.sum(axis=1, keepdims=True))
    _record("softmax_rows", (a,), out)
    return out


def transpose2d(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose2d needs rank 2, got shape {a.shape}")
    out = Tensor._adopt(a.data.T)
    _record("transpose2d", (a,), out)
    return out


# ---------------------------------------------------------------------------
# feature-map primitives
# ---------------------------------------------------------------------------

def _bin_edges(n_in: int, n_out: int) -> list[tuple[int, int]]:
    # Adaptive rule: bin i covers [floor(i*n/out), ceil((i+1)*n/out)).
    return [
        ((i * n_in) // n_out, ((i + 1) * n_in + n_out - 1) // n_out)
        for i in range(n_out)
    ]


def adaptive_avg_pool(f: FeatureMap, out_h: int, out_w: int) -> FeatureMap:
    """Average-pool a feature map to an (out_h, out_w) grid.

    Pooling to the input extents is the identity. Bins follow the
    floor/ceil adaptive rule, so uneven extents yield overlapping bins.
    """
    if not (1 <= out_h <= f.height and 1 <= out_w <= f.width):
        raise DimensionError(
            f"pool target ({out_h}, {out_w}) must lie in 1..{f.height} x 1..{f.width}"
        )
    src = f.values.data
    rows = _bin_edges(f.height, out_h)
    cols = _bin_edges(f.width, out_w)
    pooled = np.empty((f.channels, out_h, out_w))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            pooled[:, i, j] = src[:, r0:r1, c0:c1].mean(axis=(1, 2))
    out = Tensor._adopt(pooled)
    _record("pool", (f.values,), out, in_shape=f.values.shape, rows=rows, cols=cols)
    return FeatureMap(out)


def project_1x1(f: FeatureMap, weights: Tensor) -> FeatureMap:
    """Per-pixel linear channel map (a bias-free 1x1 convolution)."""
    if weights.ndim != 2:
        raise DimensionError(f"projection weights need rank 2, got {weights.shape}")
    if weights.shape[1] != f.channels:
        raise DimensionError(
            f"projection expects {weights.shape[1]} input channels, feature map has {f.channels}"
        )
    out = Tensor._adopt(np.einsum("oi,ihw->ohw", weights.data, f.values.data))
    _record("project", (f.values, weights), out)
    return FeatureMap(out)


def split_h(f: FeatureMap, n: int) -> list[FeatureMap]:
    """Split a feature map into n equal-height segments."""
    if n < 1 or f.height % n != 0:
        raise GeometryError(f"height {f.height} is not divisible into {n} segments")
    step = f.height // n
    parts = []
    for i in range(n):
        start, stop = i * step, (i + 1) * step
        piece = Tensor._adopt(f.values.data[:, start:stop, :].copy())
        _record("slice_h", (f.values,), piece, start=start, stop=stop, in_shape=f.values.shape)
        parts.append(FeatureMap(piece))
    return parts


def concat_h(parts: Sequence[FeatureMap]) -> FeatureMap:
    """Concatenate feature maps along the height axis."""
    if not parts:
        raise DimensionError("concat_h needs at least one part")
    c, w = parts[0].channels, parts[0].width
    for p in parts:
        if p.channels != c or p.width != w:
            raise DimensionError(
                f"concat_h parts disagree: ({c}, *, {w}) vs {p.values.shape}"
            )
    tensors = tuple(p.values for p in parts)
    out = Tensor._adopt(np.concatenate([t.data for t in tensors], axis=1))
    _record("concat_h", tensors, out, heights=[p.height for p in parts])
    return FeatureMap(out)


def concat_channels(parts: Sequence[FeatureMap]) -> FeatureMap:
    """Concatenate feature maps along the channel axis."""
    if not parts:
        raise DimensionError("concat_channels needs at least one part")
    h, w = parts[0].height, parts[0].width
    for p in parts:
        if p.height != h or p.width != w:
            raise DimensionError(
                f"concat_channels parts disagree: (*, {h}, {w}) vs {p.values.shape}"
            )
    tensors = tuple(p.values for p in parts)
    out = Tensor._adopt(np.concatenate([t.data for t in tensors], axis=0))
    _record("concat_c", tensors, out, channels=[p.channels for p in parts])
    return FeatureMap(out)


# ---------------------------------------------------------------------------
# shape and elementwise helpers
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    out = Tensor._adopt(a.data.reshape(shape))
    _record("reshape", (a,), out, in_shape=a.shape)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    out = Tensor._adopt(a.data + b.data)
    _record("add", (a, b), out)
    return out


def multiply(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"multiply needs equal shapes, got {a.shape} and {b.shape}")
    out = Tensor._adopt(a.data * b.data)
    _record("mul", (a, b), out)
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor._adopt(a.data * float(factor))
    _record("scale", (a,), out, factor=float(factor))
    return out


def sum_all(a: Tensor) -> Tensor:
    """Sum of all elements as a shape-(1,) tensor (the minimal scalar)."""
    out = Tensor._adopt(np.array([a.data.sum()]))
    _record("sum", (a,), out, in_shape=a.shape)
    return out
