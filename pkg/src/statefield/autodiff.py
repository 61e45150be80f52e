"""Minimal define-by-run reverse-mode automatic differentiation over numpy arrays.

Operations record themselves onto the innermost active :class:`Tape`. Outside a
tape nothing is recorded, which is how inference runs.

    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(square(w))
    >>> backward(tape, loss)
    >>> w.grad
    array([2., 4.])
"""

from __future__ import annotations

import contextlib
import threading
import weakref
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "ContractError",
    "NumericError",
    "forward_op",
    "backward",
    "grad_check",
    "no_tape",
    "registered_ops",
]


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: _Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar
    def __add__(self, other):
        return forward_op("add", [self, other])

    def __radd__(self, other):
        return forward_op("add", [other, self])

    def __sub__(self, other):
        return forward_op("sub", [self, other])

    def __rsub__(self, other):
        return forward_op("sub", [other, self])

    def __mul__(self, other):
        return forward_op("mul", [self, other])

    def __rmul__(self, other):
        return forward_op("mul", [other, self])

    def __truediv__(self, other):
        return forward_op("div", [self, other])

    def __rtruediv__(self, other):
        return forward_op("div", [other, self])

    def __neg__(self):
        return forward_op("mul", [self, -1.0])

    def __matmul__(self, other):
        return forward_op("matmul", [self, other])

    def __getitem__(self, key):
        return forward_op("slice", [self], key=key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return forward_op("reshape", [self], shape=shape)

    @property
    def T(self):
        return forward_op("transpose", [self])

    def sum(self, axis=None, keepdims: bool = False):
        return forward_op("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return forward_op("mean", [self], axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: list[Tensor], output: Tensor, backward_fn):
        self.op = op
        self.inputs = inputs
        # weak so that dropping the tape frees the graph without a cycle collection
        self.output = weakref.ref(output)
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations. Append order is a topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_tape():
    """Run the enclosed block without recording, even inside a tape."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


# ---------------------------------------------------------------------------
# operation registry


_OPS: dict[str, Callable] = {}


_NEEDS_AWARE: set[str] = set()


def _register(name: str, needs_aware: bool = False):
    # needs-aware ops receive ``needs`` (which inputs want a gradient) and may skip the rest
    def deco(fn):
        _OPS[name] = fn
        if needs_aware:
            _NEEDS_AWARE.add(name)
        return fn

    return deco


def registered_ops() -> list[str]:
    return sorted(_OPS)


def _as_tensor(x, like: np.ndarray | None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def forward_op(name: str, inputs: Sequence, **attrs) -> Tensor:
    try:
        fn = _OPS[name]
    except KeyError:
        raise ContractError(f"unknown operation {name!r}") from None
    like = next((x.data for x in inputs if isinstance(x, Tensor)), None)
    tensors = [_as_tensor(x, like) for x in inputs]
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in tensors)
    if name in _NEEDS_AWARE:
        attrs["needs"] = tuple(t.requires_grad for t in tensors) if track else (False,) * len(tensors)
    out_data, backward_fn = fn(*[t.data for t in tensors], **attrs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        node = _Node(name, tensors, out, backward_fn)
        out.node = node
        tape.record(node)
    return out


def _suffix_ok(big: tuple, small: tuple) -> bool:
    return len(small) <= len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _check_binary(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or _suffix_ok(a.shape, b.shape) or _suffix_ok(b.shape, a.shape):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


@_register("matmul", needs_aware=True)
def _matmul(a, b, needs=(True, True)):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a @ b

    def bwd(g):
        return (g @ b.T if needs[0] else None), (a.T @ g if needs[1] else None)

    return out, bwd


@_register("affine", needs_aware=True)
def _affine(x, w, b, needs=(True, True, True)):
    """x @ w + b with a bias vector; one output buffer instead of two."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: incompatible shapes {x.shape}, {w.shape}, {b.shape}")
    out = x @ w
    out += b

    def bwd(g):
        return (
            g @ w.T if needs[0] else None,
            x.T @ g if needs[1] else None,
            g.sum(axis=0) if needs[2] else None,
        )

    return out, bwd


@_register("add")
def _add(a, b):
    _check_binary("add", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return a + b, bwd


@_register("sub")
def _sub(a, b):
    _check_binary("sub", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return a - b, bwd


@_register("mul")
def _mul(a, b):
    _check_binary("mul", a, b)

    def bwd(g):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return a * b, bwd


@_register("div")
def _div(a, b):
    _check_binary("div", a, b)
    out = a / b

    def bwd(g):
        ga = g / b
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return out, bwd


@_register("maximum")
def _maximum(a, b):
    _check_binary("maximum", a, b)
    pick_a = a >= b

    def bwd(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return np.where(pick_a, a, b), bwd


@_register("minimum")
def _minimum(a, b):
    _check_binary("minimum", a, b)
    pick_a = a <= b

    def bwd(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return np.where(pick_a, a, b), bwd


@_register("broadcast")
def _broadcast(a, shape):
    shape = tuple(shape)
    ok = a.ndim <= len(shape) and all(
        s == t or s == 1 for s, t in zip(a.shape[::-1], shape[::-1])
    )
    if not ok:
        raise ShapeError(f"broadcast: cannot expand {a.shape} to {shape}")

    def bwd(g):
        return (_unbroadcast(g, a.shape),)

    return np.broadcast_to(a, shape).copy(), bwd


@_register("sum")
def _sum(a, axis=None, keepdims=False):
    out = np.sum(a, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return np.asarray(out), bwd


@_register("mean")
def _mean(a, axis=None, keepdims=False):
    out = np.mean(a, axis=axis, keepdims=keepdims)
    count = a.size // max(np.asarray(out).size, 1) if a.size else 1

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape),)

    return np.asarray(out), bwd


@_register("relu")
def _relu(a):
    mask = a > 0

    def bwd(g):
        return (g * mask,)

    return np.maximum(a, 0), bwd


@_register("tanh")
def _tanh(a):
    out = np.tanh(a)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return out, bwd


def _sigmoid_np(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@_register("sigmoid")
def _sigmoid(a):
    out = _sigmoid_np(a)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return out, bwd


@_register("softplus")
def _softplus(a):
    out = np.logaddexp(0.0, a).astype(a.dtype, copy=False)

    def bwd(g):
        return (g * _sigmoid_np(a),)

    return out, bwd


@_register("exp")
def _exp(a):
    out = np.exp(a)

    def bwd(g):
        return (g * out,)

    return out, bwd


@_register("log")
def _log(a):
    def bwd(g):
        return (g / a,)

    return np.log(a), bwd


@_register("sin")
def _sin(a):
    def bwd(g):
        return (g * np.cos(a),)

    return np.sin(a), bwd


@_register("cos")
def _cos(a):
    def bwd(g):
        return (-g * np.sin(a),)

    return np.cos(a), bwd


@_register("square")
def _square(a):
    def bwd(g):
        return (2.0 * g * a,)

    return a * a, bwd


@_register("abs")
def _abs(a):
    def bwd(g):
        return (g * np.sign(a),)

    return np.abs(a), bwd


@_register("concat")
def _concat(*arrays, axis=0):
    ref = arrays[0]
    for arr in arrays[1:]:
        if arr.ndim != ref.ndim or any(
            s != t for i, (s, t) in enumerate(zip(arr.shape, ref.shape)) if i != axis % ref.ndim
        ):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {arr.shape}")
    sizes = [arr.shape[axis] for arr in arrays]
    cuts = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, cuts, axis=axis))

    return np.concatenate(arrays, axis=axis), bwd


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, np.integer)) or k is None or k is Ellipsis for k in parts)


@_register("slice")
def _slice(a, key):
    out = a[key]
    basic = _is_basic_index(key)

    def bwd(g):
        full = np.zeros_like(a)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return np.array(out, copy=True), bwd


@_register("reshape")
def _reshape(a, shape):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def bwd(g):
        return (g.reshape(a.shape),)

    return out, bwd


@_register("transpose")
def _transpose(a):
    def bwd(g):
        return (g.T,)

    return a.T, bwd


# ---------------------------------------------------------------------------
# functional shorthands


def matmul(a, b):
    return forward_op("matmul", [a, b])


def affine(x, w, b):
    return forward_op("affine", [x, w, b])


def add(a, b):
    return forward_op("add", [a, b])


def sub(a, b):
    return forward_op("sub", [a, b])


def mul(a, b):
    return forward_op("mul", [a, b])


def div(a, b):
    return forward_op("div", [a, b])


def maximum(a, b):
    return forward_op("maximum", [a, b])


def minimum(a, b):
    return forward_op("minimum", [a, b])


def broadcast(a, shape):
    return forward_op("broadcast", [a], shape=tuple(shape))


def sum_(a, axis=None, keepdims=False):
    return forward_op("sum", [a], axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    return forward_op("mean", [a], axis=axis, keepdims=keepdims)


def relu(a):
    return forward_op("relu", [a])


def tanh(a):
    return forward_op("tanh", [a])


def sigmoid(a):
    return forward_op("sigmoid", [a])


def softplus(a):
    return forward_op("softplus", [a])


def exp(a):
    return forward_op("exp", [a])


def log(a):
    return forward_op("log", [a])


def sin(a):
    return forward_op("sin", [a])


def cos(a):
    return forward_op("cos", [a])


def square(a):
    return forward_op("square", [a])


def abs_(a):
    return forward_op("abs", [a])


def concat(tensors, axis=0):
    return forward_op("concat", list(tensors), axis=axis)


def reshape(a, shape):
    return forward_op("reshape", [a], shape=tuple(shape))


def transpose(a):
    return forward_op("transpose", [a])


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, loss: Tensor, retain_grads: bool = True) -> None:
    """Populate ``.grad`` of every tape-attached tensor reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` arrays, so replaying a tape
    without zeroing adds the same contribution again. With ``retain_grads``
    off only leaves receive ``.grad``, which halves peak memory.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None or not tape.nodes or loss.node not in _tail_search(tape, loss.node):
        raise ContractError("loss was not recorded on this tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        out = node.output()
        if out is None:
            continue
        g = pending.pop(id(out), None)
        if g is None:
            continue
        if retain_grads:
            _accumulate(out, g)
        grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            prev = pending.get(key)
            pending[key] = gi if prev is None else prev + gi
            if t.node is None:
                leaves[key] = t
    for key, t in leaves.items():
        _accumulate(t, pending[key])


def _tail_search(tape: Tape, node: _Node):
    # loss is almost always the last node; fall back to a full scan
    if tape.nodes[-1] is node:
        return (node,)
    return tape.nodes


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.shape:
        g = np.broadcast_to(g, t.shape)
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(x)
    if not np.all(np.isfinite(y.data)):
        raise NumericError("function value is not finite")
    if y.node is None:
        analytic = np.zeros_like(base)
    else:
        backward(tape, y)
        analytic = x.grad if x.grad is not None else np.zeros_like(base)

    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(base.copy())).data
        flat[i] = orig - eps
        fm = f(Tensor(base.copy())).data
        flat[i] = orig
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NumericError(f"non-finite function value near coordinate {i}")
        num_flat[i] = (float(np.sum(fp)) - float(np.sum(fm))) / (2.0 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
