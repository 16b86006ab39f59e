"""Minimal tensor container and reverse-mode gradient tape.

Tensors wrap a numpy array (float32 for training, float64 for gradient
checking). Operations defined in :mod:`voxformer.numerics.ops` record an
adjoint closure on the active tape; ``backward(loss)`` replays the closures
in strict reverse execution order, which for single-threaded execution is a
valid topological order of the computation DAG.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import NotRecorded, NotScalar, TapeConsumed

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-dimensional float tensor, immutable by convention once produced by an op."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[GradTape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class GradTape:
    """Ordered record of executed operations, replayable once in reverse."""

    __slots__ = ("_records", "consumed")

    def __init__(self):
        # each record: (output tensor, input tensors, adjoint fn(gout) -> grads per input)
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: Sequence[Tensor], adjoint: Callable) -> None:
        self._records.append((out, tuple(inputs), adjoint))
        out._tape = self


_ACTIVE_TAPE: Optional[GradTape] = None


def active_tape() -> Optional[GradTape]:
    return _ACTIVE_TAPE


@contextlib.contextmanager
def tape() -> Iterator[GradTape]:
    """Open a gradient tape; ops executed inside are recorded on it."""
    global _ACTIVE_TAPE
    prev = _ACTIVE_TAPE
    t = GradTape()
    _ACTIVE_TAPE = t
    try:
        yield t
    finally:
        _ACTIVE_TAPE = prev


def apply_op(out_data: np.ndarray, inputs: Sequence[Tensor], adjoint: Callable) -> Tensor:
    """Wrap an op result, recording its adjoint when grads are needed.

    ``adjoint(gout)`` must return one gradient array (or None) per input,
    in input order. Inputs whose ``requires_grad`` is False may receive None.
    """
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    if _ACTIVE_TAPE is not None and out.requires_grad:
        _ACTIVE_TAPE.record(out, inputs, adjoint)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``."""
    if loss.size != 1:
        raise NotScalar(f"backward requires a scalar loss, got shape {loss.shape}")
    t = loss._tape
    if t is None:
        if loss.requires_grad:
            raise NotRecorded("loss was not produced under an active GradTape")
        # loss does not depend on any parameter: nothing to do
        return
    if t.consumed:
        raise TapeConsumed("tape already replayed; re-run the forward pass")
    t.consumed = True
    loss.grad = np.ones_like(loss.data)
    for out, inputs, adjoint in reversed(t._records):
        if out.grad is None:
            continue  # not an ancestor of the loss
        grads = adjoint(out.grad)
        for inp, g in zip(inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                # own a writable buffer; g may be a view or broadcast result
                inp.grad = np.array(g, dtype=inp.data.dtype)
            else:
                inp.grad += g
    t._records.clear()


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
