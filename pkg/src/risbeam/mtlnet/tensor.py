"""A small reverse-mode autodiff kernel over numpy arrays.

Only the layers the beam-selection network needs are provided.  Every op
builds a :class:`Tensor` that remembers its parents and a closure that
pushes the output gradient back to them; :meth:`Tensor.backward` runs the
closures in reverse topological order.

Arrays are float32 by default.  Gradient checks switch to float64 with
``with precision(np.float64): ...``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidArgument

_DTYPE = np.float32


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    global _DTYPE
    previous, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: Sequence["Tensor"] = (),
                 backward: Callable[[np.ndarray], None] | None = None):
        self.data = np.asarray(data, dtype=_DTYPE) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise InvalidArgument("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if p.requires_grad)
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # intermediate gradients are not needed after propagation
                    node.grad = None

    # operator sugar
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DTYPE), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DTYPE))


def _shape_error(op: str, *shapes) -> InvalidArgument:
    return InvalidArgument(f"{op}: incompatible shapes " + " vs ".join(map(str, shapes)))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))
    return Tensor(out, parents=(a, b), backward=backward)


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two equally shaped tensors (no broadcasting)."""
    if a.shape != b.shape:
        raise _shape_error("residual_add", a.shape, b.shape)
    return add(a, b)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        x._accumulate(g * c)
    return Tensor(x.data * x.data.dtype.type(c), parents=(x,), backward=backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)
    return Tensor(x.data * mask, parents=(x,), backward=backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        x._accumulate(g.reshape(x.shape))
    return Tensor(x.data.reshape(shape), parents=(x,), backward=backward)


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    def backward(g):
        x._accumulate(np.swapaxes(g, a1, a2))
    return Tensor(np.swapaxes(x.data, a1, a2), parents=(x,), backward=backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise _shape_error("concat", *(x.shape for x in xs)) from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        for x, piece in zip(xs, np.split(g, bounds, axis=axis)):
            x._accumulate(piece)
    return Tensor(out, parents=tuple(xs), backward=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backward(g):
        a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return Tensor(out, parents=(a, b), backward=backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` of shape ``(in, out)``."""
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise _shape_error("linear", x.shape, weight.shape)
    flat = x.data.reshape(-1, weight.shape[0])
    out = flat @ weight.data
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise _shape_error("linear bias", bias.shape, weight.shape)
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (weight.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        x._accumulate((g2 @ weight.data.T).reshape(x.shape))
        weight._accumulate(flat.T @ g2)
        if bias is not None:
            bias._accumulate(g2.sum(axis=0))
    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor(out, parents=parents, backward=backward)


def _windows(x: np.ndarray, kh: int, kw: int, pad: tuple[int, int]) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1])))
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero padding that keeps ``H x W``.

    ``x`` is ``(B, C, H, W)``, ``kernels`` is ``(O, C, kh, kw)`` with odd
    ``kh`` and ``kw``.
    """
    if x.data.ndim != 4 or kernels.data.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise _shape_error("conv2d", x.shape, kernels.shape)
    _, _, kh, kw = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidArgument(f"conv2d needs odd kernel sizes, got {(kh, kw)}")
    pad = (kh // 2, kw // 2)
    win = _windows(x.data, kh, kw, pad)  # (B, C, H, W, kh, kw)
    out = np.tensordot(win, kernels.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        kernels._accumulate(np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gwin = _windows(g, kh, kw, pad)  # (B, O, H, W, kh, kw)
            flipped = kernels.data[:, :, ::-1, ::-1]
            gx = np.tensordot(gwin, flipped, axes=([1, 4, 5], [0, 2, 3]))
            x._accumulate(gx.transpose(0, 3, 1, 2))
    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor(out, parents=parents, backward=backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x._accumulate(s * (g - np.sum(g * s, axis=-1, keepdims=True)))
    return Tensor(s, parents=(x,), backward=backward)


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | int | None = None) -> Tensor:
    """Inverted dropout: identity in evaluation mode, ``mask / (1 - rate)`` in training."""
    if not 0 <= rate < 1:
        raise InvalidArgument(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1 - rate)

    def backward(g):
        x._accumulate(g * mask)
    return Tensor(x.data * mask, parents=(x,), backward=backward)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean natural-log cross-entropy over every softmax group.

    ``logits`` is ``(..., C)`` and ``labels`` holds one class index per group
    (shape ``logits.shape[:-1]``).
    """
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != logits.shape[:-1]:
        raise _shape_error("cross_entropy", logits.shape, labels.shape)
    n_classes = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidArgument(f"labels outside [0, {n_classes})")
    logp = log_softmax(logits.data)
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)
    count = labels.size
    loss = -picked.sum() / count

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, labels[..., None],
                          np.take_along_axis(grad, labels[..., None], axis=-1) - 1, axis=-1)
        logits._accumulate(grad * (g / count))
    return Tensor(np.asarray(loss, dtype=logits.data.dtype), parents=(logits,), backward=backward)
