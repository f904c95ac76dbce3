"""Dense N-d tensors with reverse-mode autodiff over a dynamic tape.

A ``Tensor`` wraps a row-major numpy buffer (float32 or float64). Gradient
tracking is opt-in: create a ``Tape``, ``watch`` the tensors you want
gradients for, build the computation, then call ``backward`` on a scalar
root. The tape is append-only, so its node order is already topological;
it is consumed (freed) by the backward sweep.

Tapes are confined to a single thread. Finished tensors may be shared
read-only across threads.
"""

from __future__ import annotations

import struct
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NoTape, NotScalar, ShapeMismatch

__all__ = [
    "Tensor", "Tape", "GradientMap", "backward",
    "add", "sub", "mul", "div", "scale",
    "tanh", "sigmoid", "silu", "relu", "sqrt", "elementwise",
    "matmul", "reshape", "transpose", "concat",
    "reduce_sum", "reduce_mean", "reduce_max", "softmax",
    "finite_diff_grad", "dump_tensor", "load_tensor",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Immutable dense array, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, dtype=None, tape: "Tape" = None, node_id: int = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = np.ascontiguousarray(arr)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tracked = "" if self.tape is None else f", node={self.node_id}"
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.dtype.name}{tracked})"

    # Arithmetic sugar; scalars multiply/add as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents, backward):
        self.parents = parents      # node ids aligned with backward's outputs
        self.backward = backward    # grad_out -> tuple of parent grads (or None)


class GradientMap:
    """Gradients keyed by tape node, looked up by tensor."""

    def __init__(self, grads: dict):
        self._grads = grads

    def __contains__(self, t: Tensor) -> bool:
        return t.node_id in self._grads

    def __getitem__(self, t: Tensor) -> Tensor:
        if t.node_id not in self._grads:
            raise NoTape(f"no gradient recorded for {t!r}")
        return Tensor(self._grads[t.node_id])

    def get(self, t: Tensor, default=None):
        g = self._grads.get(t.node_id)
        return default if g is None else Tensor(g)

    def __len__(self):
        return len(self._grads)


class Tape:
    """Append-only record of differentiable ops; consumed by ``backward``."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._live = True

    @property
    def live(self) -> bool:
        return self._live

    def __len__(self):
        return len(self._nodes)

    def watch(self, t: Tensor) -> Tensor:
        """Register a leaf and return a tracked alias sharing its buffer."""
        if not self._live:
            raise NoTape("tape already consumed by backward()")
        nid = len(self._nodes)
        self._nodes.append(_Node((), None))
        return Tensor(t.data, tape=self, node_id=nid)

    def _record(self, data: np.ndarray, parents: Sequence[Tensor], bw: Callable) -> Tensor:
        nid = len(self._nodes)
        self._nodes.append(_Node(tuple(p.node_id for p in parents), bw))
        return Tensor(data, tape=self, node_id=nid)

    def backward(self, root: Tensor) -> GradientMap:
        """Reverse sweep from a scalar root; frees the tape."""
        if not self._live:
            raise NoTape("tape already consumed by backward()")
        if root.tape is not self:
            raise NoTape("root was not recorded on this tape")
        if root.data.shape != (1,):
            raise NotScalar(f"backward root must have shape (1,), got {tuple(root.shape)}")
        grads: dict[int, np.ndarray] = {root.node_id: np.ones(1, dtype=root.dtype)}
        for nid in range(root.node_id, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self._nodes[nid]
            if node.backward is None:
                continue
            for pid, pg in zip(node.parents, node.backward(g)):
                if pg is None:
                    continue
                acc = grads.get(pid)
                grads[pid] = pg if acc is None else acc + pg
        self._nodes = []
        self._live = False
        return GradientMap(grads)


def backward(root: Tensor) -> GradientMap:
    """Backward sweep through the tape that recorded ``root``."""
    if root.tape is None:
        raise NoTape("root tensor carries no tape")
    return root.tape.backward(root)


def _live_tape(*tensors) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if t is None or t.tape is None or not t.tape.live:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise NoTape("operands were recorded on different live tapes")
    return tape


def _emit(data, inputs, grad_fns) -> Tensor:
    """Wrap ``data``; record a node if any input is tracked.

    ``grad_fns[i]`` maps the output gradient to input i's gradient.
    """
    tape = _live_tape(*inputs)
    if tape is None:
        return Tensor(data)
    parents, fns = [], []
    for t, fn in zip(inputs, grad_fns):
        if t is not None and t.tape is tape:
            parents.append(t)
            fns.append(fn)
    return tape._record(data, parents, lambda g, fns=tuple(fns): tuple(fn(g) for fn in fns))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def _check_broadcast(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {tuple(a.shape)} with {tuple(b.shape)}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _emit(a.data + b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape),
                  lambda g: _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _emit(a.data - b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape),
                  lambda g: _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    return _emit(a.data * b.data, (a, b),
                 (lambda g: _unbroadcast(g * b.data, a.shape),
                  lambda g: _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    inv = 1.0 / b.data
    return _emit(a.data * inv, (a, b),
                 (lambda g: _unbroadcast(g * inv, a.shape),
                  lambda g: _unbroadcast(-g * a.data * inv * inv, b.shape)))


def scale(a: Tensor, alpha: float) -> Tensor:
    return _emit(a.data * alpha, (a,), (lambda g: g * alpha,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit(y, (a,), (lambda g: g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_nd(a.data)
    return _emit(y, (a,), (lambda g: g * y * (1.0 - y),))


def _sigmoid_nd(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_nd(a.data)
    y = a.data * s
    return _emit(y, (a,), (lambda g: g * (s + y * (1.0 - s)),))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    return _emit(y, (a,), (lambda g: g * (a.data > 0),))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _emit(y, (a,), (lambda g: g * (0.5 / y),))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "silu": silu, "relu": relu, "sqrt": sqrt}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a: Tensor, b: Tensor = None, alpha: float = None) -> Tensor:
    """Dispatch an elementwise op by name ('scale' takes ``alpha``)."""
    if op == "scale":
        if alpha is None:
            raise ValueError("scale requires alpha")
        return scale(a, alpha)
    if op in _UNARY:
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} requires two operands")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# matmul and movement ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dims follow numpy semantics."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"inner extents differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"batch dims incompatible: {tuple(a.shape)} @ {tuple(b.shape)}") from None

    def da(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def db(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return _emit(y, (a, b), (da, db))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeMismatch(f"cannot reshape {tuple(a.shape)} to {shape}")
    return _emit(a.data.reshape(shape), (a,),
                 (lambda g: g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 (lambda g: g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_fn(i):
        lo, hi = offsets[i], offsets[i + 1]

        def fn(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]
        return fn

    return _emit(data, tuple(tensors), tuple(make_fn(i) for i in range(len(tensors))))


# ---------------------------------------------------------------------------
# reductions and softmax


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    y = a.data.sum(axis=axes, keepdims=keepdims)
    if y.ndim == 0:
        y = y.reshape(1)

    def da(g):
        if not keepdims:
            gg = g.reshape([1 if i in axes else s for i, s in enumerate(a.shape)])
        else:
            gg = g
        return np.broadcast_to(gg, a.shape)

    return _emit(y, (a,), (da,))


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes]))
    y = a.data.mean(axis=axes, keepdims=keepdims)
    if y.ndim == 0:
        y = y.reshape(1)

    def da(g):
        if not keepdims:
            gg = g.reshape([1 if i in axes else s for i, s in enumerate(a.shape)])
        else:
            gg = g
        return np.broadcast_to(gg / n, a.shape)

    return _emit(y, (a,), (da,))


def reduce_max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; gradient routes to the first maximum."""
    axis = axis % a.ndim
    y = a.data.max(axis=axis, keepdims=True)
    idx = np.argmax(a.data, axis=axis)

    def da(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        out = np.zeros_like(a.data)
        np.put_along_axis(out, np.expand_dims(idx, axis), gg, axis=axis)
        return out

    out_data = y if keepdims else np.squeeze(y, axis=axis)
    if out_data.ndim == 0:
        out_data = out_data.reshape(1)
    return _emit(out_data, (a,), (da,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def da(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return _emit(y, (a,), (da,))


# ---------------------------------------------------------------------------
# verification oracle


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    base = x.data.astype(np.float64)
    g = np.zeros_like(base)
    flat = g.reshape(-1)
    for i in range(base.size):
        bump = base.reshape(-1).copy()
        bump[i] += h
        fp = f(Tensor(bump.reshape(base.shape)))
        bump[i] -= 2 * h
        fm = f(Tensor(bump.reshape(base.shape)))
        flat[i] = (float(fp) - float(fm)) / (2 * h)
    return Tensor(g)


# ---------------------------------------------------------------------------
# binary tensor dump ("TNSR")

_TNSR_MAGIC = b"TNSR"
_TNSR_VERSION = 1
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def dump_tensor(t: Tensor, fh) -> None:
    """Write one tensor blob: magic, u16 version, u8 dtype, u8 ndim, u64 extents, raw data."""
    fh.write(_TNSR_MAGIC)
    fh.write(struct.pack("<HBB", _TNSR_VERSION, _DTYPE_CODE[t.dtype], t.ndim))
    fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
    fh.write(t.data.astype(t.data.dtype.newbyteorder("<"), copy=False).tobytes())


def load_tensor(fh) -> Tensor:
    magic = fh.read(4)
    if magic != _TNSR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    version, code, ndim = struct.unpack("<HBB", fh.read(4))
    if version != _TNSR_VERSION:
        raise ValueError(f"unsupported tensor version {version}")
    shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
    dt = _CODE_DTYPE[code]
    n = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(fh.read(n * dt.itemsize), dtype=dt).reshape(shape)
    return Tensor(data.astype(dt.newbyteorder("=")))
