"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a C-contiguous numpy array (the flat row-major
value buffer plus its shape) and an optional gradient buffer of the same
size. Every differentiable op appends one node to the active
:class:`Tape`; nodes are recorded in creation order, which is already a
topological order, so ``backward`` is a single reverse sweep.

Conventions:

* ops run under ``with new_tape():`` when gradients are wanted; a tape
  is single-use — a second ``backward`` on it raises :class:`TapeError`
* ``no_grad()`` suspends recording (evaluation paths)
* broadcasting is restricted to scalar-with-tensor; any other shape
  mismatch raises :class:`ShapeError` (silent dimension bugs are worse
  than verbose call sites in the inverted token layout)
* matmul accepts 2D x 2D or batched 3D x 3D with equal leading size
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an op contract."""


class TapeError(RuntimeError):
    """Backward-pass contract violation (non-scalar loss, reused tape, ...)."""


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "node_id", "name")

    def __init__(self, values, requires_grad=False, name=None):
        # note: ascontiguousarray would promote 0-d scalars to 1-d
        arr = np.asarray(values, dtype=np.float64, order="C")
        self.values = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = None  # index of the producing node on the active tape
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn  # gy -> tuple of grads aligned with inputs


class Tape:
    """Ordered record of ops; inputs of every node precede it."""

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def record(self, out, inputs, backward_fn):
        out.node_id = len(self.nodes)
        self.nodes.append(_Node(out, inputs, backward_fn))


# per-thread state: independent tapes may run in parallel on disjoint data
_LOCAL = threading.local()


def _tape_stack() -> list[Tape]:
    if not hasattr(_LOCAL, "tapes"):
        _LOCAL.tapes = []
    return _LOCAL.tapes


def _grad_stack() -> list[bool]:
    if not hasattr(_LOCAL, "grad"):
        _LOCAL.grad = [True]
    return _LOCAL.grad


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def new_tape():
    tape = Tape()
    _tape_stack().append(tape)
    try:
        yield tape
    finally:
        _tape_stack().pop()


@contextmanager
def no_grad():
    _grad_stack().append(False)
    try:
        yield
    finally:
        _grad_stack().pop()


def _record(out, inputs, backward_fn):
    tape = active_tape()
    if tape is None or not _grad_stack()[-1]:
        return out
    if not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    tape.record(out, inputs, backward_fn)
    return out


def backward(loss):
    """Reverse sweep from a scalar loss recorded on the active tape.

    Every requires_grad tensor that fed the loss receives its
    accumulated gradient; requires_grad tensors on the tape that did not
    feed the loss end up with explicit zeros.
    """
    if loss.shape != ():
        raise TapeError(f"backward requires a scalar loss, got shape {tuple(loss.shape)}")
    tape = active_tape()
    if tape is None:
        raise TapeError("no active tape; run the forward pass inside `with new_tape():`")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward; open a new tape per step")
    if loss.node_id is None or loss.node_id >= len(tape.nodes) or tape.nodes[loss.node_id].out is not loss:
        raise TapeError("loss was not produced on the active tape")
    tape.consumed = True

    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        gy = node.out.grad
        if gy is None:
            continue  # did not contribute to the loss
        grads = node.backward_fn(gy)
        for t, g in zip(node.inputs, grads):
            if g is not None and t.requires_grad:
                t.accumulate_grad(g)
    # unreachable-but-recorded requires_grad tensors report zero gradients
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.values)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    ok = (len(sa) == len(sb) and len(sa) in (2, 3) and sa[-1] == sb[-2]
          and (len(sa) == 2 or sa[0] == sb[0]))
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {tuple(sa)} x {tuple(sb)}")
    out = Tensor(np.matmul(a.values, b.values))

    def bwd(gy):
        ga = np.matmul(gy, b.values.swapaxes(-1, -2)) if a.requires_grad else None
        gb = np.matmul(a.values.swapaxes(-1, -2), gy) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: y[..., m] = x[..., k] @ w[m, k]^T + b[m]."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.values.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: x {tuple(x.shape)} incompatible with weight {tuple(w.shape)}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {tuple(b.shape)} does not match weight {tuple(w.shape)}")
    y = np.matmul(x.values, w.values.T)
    if b is not None:
        y = y + b.values
    out = Tensor(y)
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(gy):
        gx = np.matmul(gy, w.values) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            g2 = gy.reshape(-1, w.shape[0])
            x2 = x.values.reshape(-1, w.shape[1])
            gw = g2.T @ x2
        if b is None:
            return gx, gw
        gb = gy.reshape(-1, w.shape[0]).sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _record(out, inputs, bwd)


def _ew_shapes(a, b, opname):
    if a.shape == b.shape:
        return
    if a.shape == () or b.shape == ():
        return
    raise ShapeError(f"{opname}: shapes {tuple(a.shape)} and {tuple(b.shape)} "
                     "differ (only scalar-with-tensor broadcasting is allowed)")


def _reduce_to(g, shape):
    # undo scalar broadcast
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _ew_shapes(a, b, "add")
    out = Tensor(a.values + b.values)

    def bwd(gy):
        ga = _reduce_to(gy, a.shape) if a.requires_grad else None
        gb = _reduce_to(gy, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _ew_shapes(a, b, "sub")
    out = Tensor(a.values - b.values)

    def bwd(gy):
        ga = _reduce_to(gy, a.shape) if a.requires_grad else None
        gb = _reduce_to(-gy, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _ew_shapes(a, b, "mul")
    out = Tensor(a.values * b.values)

    def bwd(gy):
        ga = _reduce_to(gy * b.values, a.shape) if a.requires_grad else None
        gb = _reduce_to(gy * a.values, b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bwd)


def gelu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(kernels.gelu_forward(x.values))

    def bwd(gy):
        return (kernels.gelu_backward(x.values, gy),)

    return _record(out, (x,), bwd)


def transpose_last2(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.values.ndim < 2:
        raise ShapeError(f"transpose_last2 needs >= 2 dims, got shape {tuple(x.shape)}")
    out = Tensor(x.values.swapaxes(-1, -2))

    def bwd(gy):
        return (np.ascontiguousarray(gy.swapaxes(-1, -2)),)

    return _record(out, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.values.mean())

    def bwd(gy):
        return (np.full_like(x.values, float(gy) / x.size),)

    return _record(out, (x,), bwd)


def softmax_lastdim(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.values.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"softmax_lastdim needs a non-empty last axis, got {tuple(x.shape)}")
    n = x.shape[-1]
    y2 = kernels.softmax_rows(x.values.reshape(-1, n))
    out = Tensor(y2.reshape(x.shape))

    def bwd(gy):
        gx = kernels.softmax_rows_backward(y2, gy.reshape(-1, n))
        return (gx.reshape(x.shape),)

    return _record(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis slice to zero mean / unit (population) variance,
    then scale and shift elementwise."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},), got "
                         f"{tuple(gain.shape)} / {tuple(bias.shape)}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    y2, xhat, rstd = kernels.layernorm_rows(
        x.values.reshape(-1, d), gain.values, bias.values, eps)
    out = Tensor(y2.reshape(x.shape))

    def bwd(gy):
        gx2, ggain, gbias = kernels.layernorm_rows_backward(
            xhat, rstd, gain.values, gy.reshape(-1, d))
        return (gx2.reshape(x.shape) if x.requires_grad else None,
                ggain if gain.requires_grad else None,
                gbias if bias.requires_grad else None)

    return _record(out, (x, gain, bias), bwd)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {tuple(pred.shape)} and "
                         f"{tuple(target.shape)} differ")
    out = Tensor(kernels.sq_diff_mean(pred.values, target.values))

    def bwd(gy):
        scale = 2.0 * float(gy) / pred.size
        diff = pred.values - target.values
        gp = scale * diff if pred.requires_grad else None
        gt = -scale * diff if target.requires_grad else None
        return gp, gt

    return _record(out, (pred, target), bwd)


def slice_lastdim(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if not (0 <= start < stop <= x.shape[-1]):
        raise ShapeError(f"slice_lastdim: [{start}:{stop}] out of bounds for {tuple(x.shape)}")
    out = Tensor(x.values[..., start:stop])

    def bwd(gy):
        gx = np.zeros_like(x.values)
        gx[..., start:stop] = gy
        return (gx,)

    return _record(out, (x,), bwd)


def concat_lastdim(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    lead = parts[0].shape[:-1]
    if any(p.shape[:-1] != lead for p in parts):
        raise ShapeError("concat_lastdim: leading dimensions differ: "
                         + ", ".join(str(tuple(p.shape)) for p in parts))
    out = Tensor(np.concatenate([p.values for p in parts], axis=-1))
    widths = [p.shape[-1] for p in parts]

    def bwd(gy):
        grads, ofs = [], 0
        for p, w in zip(parts, widths):
            grads.append(np.ascontiguousarray(gy[..., ofs:ofs + w])
                         if p.requires_grad else None)
            ofs += w
        return tuple(grads)

    return _record(out, tuple(parts), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    return mul(x, Tensor(np.asarray(float(c))))
