"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are 1-D or 2-D (scalars are 1x1). Operations record backward closures
onto the active Tape in execution order; Tape.backward walks them in exact
reverse. Broadcasting is limited to scalar-vs-tensor; anything else goes
through the explicit expand_rows/expand_cols ops.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NotScalarLoss, ShapeMismatch

_TAPE_STACK: list = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatch(f"tensors are at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on non-scalar shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Records operations during forward evaluation; replays them reversed."""

    def __init__(self):
        self._ops = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def _record(self, out: Tensor, backward_fn):
        self._ops.append((out, backward_fn))

    def backward(self, loss: Tensor):
        """Populate .grad on every requires_grad tensor reachable from loss.

        Repeated calls accumulate until zero_grad is invoked on the leaves.
        """
        if loss.data.size != 1:
            raise NotScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
        loss._accumulate(np.ones_like(loss.data))
        # Reverse order guarantees every consumer of a tensor ran before its
        # producer, so out.grad is complete when we reach it. Clearing the
        # intermediate afterwards keeps repeated backward calls additive on
        # the leaves only.
        for out, backward_fn in reversed(self._ops):
            if out.grad is not None:
                backward_fn(out.grad)
                out.grad = None


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _make(data, parents, backward_fn) -> Tensor:
    """Create the result tensor, recording backward_fn when a tape is live."""
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._record(out, backward_fn)
    return out


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Collapse a broadcast gradient back to the scalar operand's shape."""
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.data.shape == b.data.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeMismatch(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# -- elementwise arithmetic ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "div")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _make(a.data * c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} x {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


# -- nonlinearities -------------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    return _make(y, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500, 500)))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    return _make(y, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(a.data * mask, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    # ln(1 + e^x) via the overflow-safe split max(x, 0) + ln(1 + e^-|x|)
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * sig)

    return _make(y, (a,), backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y)

    return _make(y, (a,), backward)


def ln(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            safe = np.where(y > 0.0, y, 1.0)
            a._accumulate(np.where(y > 0.0, 0.5 * g / safe, 0.0))

    return _make(y, (a,), backward)


# -- reductions & structure ------------------------------------------------------


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        data = a.data.sum().reshape(1, 1)
    else:
        data = a.data.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = a.data.size
        data = a.data.mean().reshape(1, 1)
    else:
        count = a.data.shape[axis]
        data = a.data.mean(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.data.shape) / count)

    return _make(data, (a,), backward)


def rowwise_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            a._accumulate(y * (g - dot))

    return _make(y, (a,), backward)


LAYER_NORM_EPS = 1e-5


def layer_norm(a: Tensor) -> Tensor:
    """Row-wise normalization to zero mean / unit variance (no affine)."""
    mu = a.data.mean(axis=1, keepdims=True)
    var = a.data.var(axis=1, keepdims=True)
    std = np.sqrt(var + LAYER_NORM_EPS)
    y = (a.data - mu) / std

    def backward(g):
        if a.requires_grad:
            n = a.data.shape[1]
            gy = (g * y).sum(axis=1, keepdims=True) / n
            gm = g.mean(axis=1, keepdims=True)
            a._accumulate((g - gm - y * gy) / std)

    return _make(y, (a,), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(a.data.T.copy(), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    other = 1 - axis
    width = tensors[0].data.shape[other]
    for t in tensors:
        if t.data.shape[other] != width:
            raise ShapeMismatch(
                f"concat axis={axis}: {t.data.shape} vs width {width} on axis {other}"
            )
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(g[lo:hi, :] if axis == 0 else g[:, lo:hi])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop, :] = g
            a._accumulate(full)

    return _make(a.data[start:stop, :].copy(), (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            a._accumulate(full)

    return _make(a.data[:, start:stop].copy(), (a,), backward)


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=int)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return _make(a.data[idx, :].copy(), (a,), backward)


def expand_rows(a: Tensor, n: int) -> Tensor:
    """Repeat a (1 x d) row n times; gradient is the column-wise sum."""
    if a.data.shape[0] != 1:
        raise ShapeMismatch(f"expand_rows needs a single row, got {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.sum(axis=0, keepdims=True))

    return _make(np.repeat(a.data, n, axis=0), (a,), backward)


def expand_cols(a: Tensor, n: int) -> Tensor:
    """Repeat an (m x 1) column n times; gradient is the row-wise sum."""
    if a.data.shape[1] != 1:
        raise ShapeMismatch(f"expand_cols needs a single column, got {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.sum(axis=1, keepdims=True))

    return _make(np.repeat(a.data, n, axis=1), (a,), backward)


def backward(tape: Tape, loss: Tensor):
    """Module-level alias mirroring Tape.backward."""
    tape.backward(loss)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)
