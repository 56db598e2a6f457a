"""Reverse-mode differentiation over the tensor primitives.

A :class:`Tape` records every primitive executed inside its ``with``
block and replays hand-written backward rules in reverse recording
order (which is a reverse topological order of the acyclic graph).
:func:`grad_check` verifies tape gradients against central finite
differences.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as tc
from .errors import ContractError, NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class TapeNode:
    """One recorded primitive: op kind, inputs, output, saved context."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: dict


class Tape:
    """Records primitives executed inside its context; see `gradients`.

    A tape is single-threaded; distinct tapes may run on distinct
    threads concurrently.
    """

    def __init__(self) -> None:
        self._nodes: list[TapeNode] = []
        self._produced: set[int] = set()
        self._tensors: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        tc._push_tape(self)
        return self

    def __exit__(self, *exc) -> None:
        tc._pop_tape(self)

    def record(self, op: str, inputs, output: Tensor, ctx: dict) -> None:
        node = TapeNode(op, tuple(inputs), output, ctx)
        self._nodes.append(node)
        self._produced.add(id(output))
        for t in node.inputs:
            self._tensors.setdefault(id(t), t)

    def leaves(self) -> list[Tensor]:
        """Tensors that entered the tape but were not produced by it."""
        return [t for i, t in self._tensors.items() if i not in self._produced]

    def gradients(
        self, loss: Tensor, wrt: Sequence[Tensor] | None = None
    ) -> dict[Tensor, Tensor]:
        """Gradients of a scalar loss for every leaf (or the given tensors).

        Leaves that do not influence the loss receive zero gradients of
        their own shape.
        """
        if loss.size != 1:
            raise ContractError(f"loss must be scalar-valued, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}

        def accumulate(t: Tensor, part: np.ndarray) -> None:
            prev = grads.get(id(t))
            grads[id(t)] = part.astype(np.float64, copy=True) if prev is None else prev + part

        for node in reversed(self._nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            _RULES[node.op](node, g, accumulate)

        targets = self.leaves() if wrt is None else list(wrt)
        out: dict[Tensor, Tensor] = {}
        for t in targets:
            arr = grads.get(id(t))
            out[t] = Tensor._adopt(arr.copy()) if arr is not None else Tensor._adopt(np.zeros(t.shape))
        return out


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor] | None = None):
    """Free-function alias for :meth:`Tape.gradients`."""
    return tape.gradients(loss, wrt)


# ---------------------------------------------------------------------------
# backward rules, one per primitive
# ---------------------------------------------------------------------------

def _bw_matmul(node, g, acc):
    a, b = node.inputs
    acc(a, g @ b.data.T)
    acc(b, a.data.T @ g)


def _bw_softmax_rows(node, g, acc):
    y = node.output.data
    dot = (g * y).sum(axis=1, keepdims=True)
    acc(node.inputs[0], y * (g - dot))


def _bw_transpose2d(node, g, acc):
    acc(node.inputs[0], g.T)


def _bw_pool(node, g, acc):
    # Each input cell in a bin receives grad/area; overlapping bins add up.
    grad = np.zeros(node.ctx["in_shape"])
    for i, (r0, r1) in enumerate(node.ctx["rows"]):
        for j, (c0, c1) in enumerate(node.ctx["cols"]):
            area = (r1 - r0) * (c1 - c0)
            grad[:, r0:r1, c0:c1] += g[:, i, j][:, None, None] / area
    acc(node.inputs[0], grad)


def _bw_project(node, g, acc):
    x, w = node.inputs
    acc(x, np.einsum("oi,ohw->ihw", w.data, g))
    acc(w, np.einsum("ohw,ihw->oi", g, x.data))


def _bw_slice_h(node, g, acc):
    grad = np.zeros(node.ctx["in_shape"])
    grad[:, node.ctx["start"]:node.ctx["stop"], :] = g
    acc(node.inputs[0], grad)


def _bw_concat_h(node, g, acc):
    offset = 0
    for t, h in zip(node.inputs, node.ctx["heights"]):
        acc(t, g[:, offset:offset + h, :])
        offset += h


def _bw_concat_c(node, g, acc):
    offset = 0
    for t, c in zip(node.inputs, node.ctx["channels"]):
        acc(t, g[offset:offset + c, :, :])
        offset += c


def _bw_reshape(node, g, acc):
    acc(node.inputs[0], g.reshape(node.ctx["in_shape"]))


def _bw_add(node, g, acc):
    acc(node.inputs[0], g)
    acc(node.inputs[1], g)


def _bw_mul(node, g, acc):
    a, b = node.inputs
    acc(a, g * b.data)
    acc(b, g * a.data)


def _bw_scale(node, g, acc):
    acc(node.inputs[0], g * node.ctx["factor"])


def _bw_sum(node, g, acc):
    acc(node.inputs[0], np.full(node.ctx["in_shape"], g.reshape(-1)[0]))


_RULES: dict[str, Callable] = {
    "matmul": _bw_matmul,
    "softmax_rows": _bw_softmax_rows,
    "transpose2d": _bw_transpose2d,
    "pool": _bw_pool,
    "project": _bw_project,
    "slice_h": _bw_slice_h,
    "concat_h": _bw_concat_h,
    "concat_c": _bw_concat_c,
    "reshape": _bw_reshape,
    "add": _bw_add,
    "mul": _bw_mul,
    "scale": _bw_scale,
    "sum": _bw_sum,
}


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of one finite-difference comparison for one parameter."""

    name: str
    max_rel_error: float
    step: float
    tolerance: float
    passed: bool


def _perturbed(t: Tensor, flat_index: int, delta: float) -> Tensor:
    data = t.data.copy()
    data.reshape(-1)[flat_index] += delta
    return Tensor._adopt(data)


def grad_check(
    f: Callable[..., Tensor],
    point: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> dict[str, GradCheckReport]:
    """Compare tape gradients of ``f(**point)`` against central differences.

    Relative error per element uses max(|analytic|, |numeric|, 1e-8) as
    the denominator; a parameter passes when its max relative error is
    below `tol`.
    """
    if h <= 0:
        raise ContractError(f"step h must be positive, got {h}")
    with Tape() as tape:
        loss = f(**point)
    if loss.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {loss.shape}")
    names = list(point.keys())
    analytic = tape.gradients(loss, wrt=[point[n] for n in names])

    reports: dict[str, GradCheckReport] = {}
    for name in names:
        t = point[name]
        ana = analytic[t].data.reshape(-1)
        num = np.empty(t.size)
        for i in range(t.size):
            values = []
            for delta in (h, -h):
                shifted = dict(point)
                shifted[name] = _perturbed(t, i, delta)
                value = f(**shifted).item()
                if not np.isfinite(value):
                    raise NumericError(
                        f"f is not finite when perturbing {name}[{i}] by {delta:+g}"
                    )
                values.append(value)
            num[i] = (values[0] - values[1]) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
        max_rel = float(np.max(np.abs(ana - num) / denom)) if t.size else 0.0
        reports[name] = GradCheckReport(
            name=name, max_rel_error=max_rel, step=h, tolerance=tol, passed=max_rel < tol
        )
    return reports
