"""Dense float tensors and a reverse-mode gradient tape.

The engine keeps all continuous state (feature maps, click embeddings,
attention activations, logits) in `Tensor` values: contiguous row-major
arrays, channels-last for spatial maps, 32-bit floats by default with a
64-bit mode for gradient checking.

Differentiation is tape-based: while a `GradientTape` is active, every
primitive op appends a (output, inputs, vjp) entry; `backward` replays the
entries once in reverse order and accumulates vector-Jacobian products.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Immutable dense array of float32 (default) or float64.

    Tensors are values: ops never mutate their inputs, and the backing
    numpy array is marked read-only, so sharing tensors across threads is
    safe.  Trainable parameters are ordinary tensors whose backing array
    an optimizer swaps out between steps via `assign_`; nothing else may
    call it.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        if dtype is None:
            d = getattr(data, "dtype", None)
            dtype = d if d in FLOAT_DTYPES else np.float32
        arr = np.asarray(data, dtype=dtype)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self.data = arr

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
        return float(self.data.reshape(()))

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data, dtype=dtype)

    def assign_(self, data) -> None:
        """Replace the backing array (optimizer-only; see class docstring)."""
        arr = np.ascontiguousarray(data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ValueError(f"assign_ shape mismatch: {arr.shape} vs {self.data.shape}")
        arr.setflags(write=False)
        self.data = arr

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    # Arithmetic operators dispatch to the primitive ops (imported lazily to
    # avoid a module cycle).

    def _ops(self):
        from liveseg.numerics import ops
        return ops

    def __add__(self, other):
        return self._ops().add(self, other)

    def __radd__(self, other):
        return self._ops().add(other, self)

    def __sub__(self, other):
        return self._ops().sub(self, other)

    def __rsub__(self, other):
        return self._ops().sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self._ops().scale(self, float(other))
        return self._ops().mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self._ops().scale(self, 1.0 / float(other))
        return self._ops().div(self, other)

    def __neg__(self):
        return self._ops().scale(self, -1.0)

    def __matmul__(self, other):
        return self._ops().matmul(self, other)

    def reshape(self, shape) -> "Tensor":
        return self._ops().reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return self._ops().transpose(self, axes)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return self._ops().reduce_sum(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x if dtype is None else x.astype(dtype)
    return Tensor(np.asarray(x), dtype=dtype)


_TAPE_STACK: list["GradientTape"] = []


class GradientTape:
    """Records primitive ops for reverse-mode differentiation.

    Use as a context manager around the forward computation; the tape is
    single-threaded per training step.  Replaying backward visits entries
    in reverse recording order exactly once.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self) -> "GradientTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def record(self, output: Tensor, inputs: Sequence, vjp: Callable) -> None:
        """Append one primitive: vjp(g) must return per-input gradients."""
        self._entries.append((output, tuple(inputs), vjp))

    def __len__(self) -> int:
        return len(self._entries)

    def recorded_ids(self) -> set:
        seen = set()
        for out, inputs, _ in self._entries:
            seen.add(id(out))
            for t in inputs:
                if isinstance(t, Tensor):
                    seen.add(id(t))
        return seen


def active_tape() -> Optional[GradientTape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(tape: GradientTape, loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulate gradients of a scalar loss w.r.t. every tensor on the tape.

    Returns a map from `id(tensor)` to the gradient array.  Tensors not on
    any path to the loss are simply absent.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ValueError("loss must be a scalar Tensor")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, vjp in reversed(tape._entries):
        g = grads.get(id(out))
        if g is None:
            continue
        in_grads = vjp(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not isinstance(t, Tensor):
                continue
            acc = grads.get(id(t))
            grads[id(t)] = gi if acc is None else acc + gi
    return grads


def gradients(tape: GradientTape, loss: Tensor, params: Iterable[Tensor],
              strict: bool = True) -> list[np.ndarray]:
    """Gradients of `loss` for each parameter, in order.

    Parameters that were recorded but do not influence the loss get zeros.
    A parameter that never appeared on the tape is an error under `strict`;
    with strict=False it also gets zeros (an architecture may legitimately
    skip weights for some input sizes, e.g. clamped pooling pyramids).
    """
    gmap = backward(tape, loss)
    seen = tape.recorded_ids()
    out = []
    for p in params:
        g = gmap.get(id(p))
        if g is not None:
            out.append(g)
        elif id(p) in seen or not strict:
            out.append(np.zeros_like(p.data))
        else:
            raise KeyError("parameter not recorded on tape")
    return out
