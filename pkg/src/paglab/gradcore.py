"""Reverse-mode autodiff over float64 numpy arrays, closed under differentiation.

Every backward rule is written in terms of the recorded primitives below, so a
gradient computed with ``create_graph=True`` is itself a graph that can be
differentiated again (double backprop).

A :class:`Tape` records every node created while it is active. ``Tape.forward``
replays the recorded ops with new leaf values.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tape", "Tensor", "Node", "GradError", "ShapeError",
    "grad", "no_record", "as_tensor",
    "add", "sub", "mul", "div", "neg", "scale", "matmul", "transpose", "relu",
    "relu_mask", "step", "exp", "log", "sum", "mean", "dot", "norm", "maximum_const",
    "logsumexp", "index_select", "broadcast_to", "sum_to", "reshape",
]


class GradError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


_ids = itertools.count()
_state = {"tape": None, "record": True}


class Tensor:
    """A value in a recorded computation: a leaf, a constant, or an op result."""

    __slots__ = ("data", "op", "inputs", "attrs", "requires_grad", "name", "id", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, op="const", inputs=(), attrs=None, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.op = op
        self.inputs = tuple(inputs)
        self.attrs = attrs or {}
        self.requires_grad = requires_grad
        self.name = name
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


Node = Tensor


class Tape:
    """Ordered record of nodes, with named leaves for parameters and inputs."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: dict[str, Tensor] = {}
        self._prev = []

    def __enter__(self):
        self._prev.append((_state["tape"], _state["record"]))
        _state["tape"] = self
        _state["record"] = True
        return self

    def __exit__(self, *exc):
        _state["tape"], _state["record"] = self._prev.pop()

    def leaf(self, name: str, value, requires_grad: bool = True) -> Tensor:
        if name in self.leaves:
            raise GradError(f"leaf {name!r} already registered on this tape")
        t = Tensor(np.array(value, dtype=np.float64), op="leaf", requires_grad=requires_grad, name=name)
        self.leaves[name] = t
        self.nodes.append(t)
        return t

    def const(self, value) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64))
        self.nodes.append(t)
        return t

    def __contains__(self, node: Tensor) -> bool:
        return any(n is node for n in self.nodes)

    def forward(self, leaves: Mapping[str, object], root: Tensor | None = None) -> np.ndarray:
        """Recompute every recorded node from new leaf values; return the root value."""
        missing = set(self.leaves) - set(leaves)
        if missing:
            raise GradError(f"unbound leaves: {sorted(missing)}")
        for node in self.nodes:
            if node.op == "leaf":
                node.data = np.array(leaves[node.name], dtype=np.float64)
            elif node.op != "const":
                node.data = _eval(node.op, [i.data for i in node.inputs], node.attrs)
        if root is None:
            root = self.nodes[-1]
        return root.data


@contextlib.contextmanager
def no_record():
    """Create nodes as detached constants: nothing is recorded or differentiable."""
    prev = _state["record"]
    _state["record"] = False
    try:
        yield
    finally:
        _state["record"] = prev


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    t = Tensor(x)
    tape = _state["tape"]
    if tape is not None and _state["record"]:
        tape.nodes.append(t)
    return t


# ---------------------------------------------------------------------------
# forward kernels

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _place(g, index, shape):
    out = np.zeros(shape)
    rows = np.arange(shape[0])
    np.add.at(out, (rows, index), g)
    return out


def _safe_recip(a):
    out = np.zeros_like(a)
    np.divide(1.0, a, out=out, where=a != 0)
    return out


_KERNELS: dict[str, Callable] = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "neg": lambda a: -a,
    "scale": lambda a, c: a * c,
    "matmul": lambda a, b: a @ b,
    "transpose": lambda a: a.T,
    "relu": lambda a: np.where(a > 0, a, 0.0),
    "step": lambda a, c: (a > c).astype(np.float64),
    "exp": np.exp,
    "log": np.log,
    "sum": lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims),
    "norm": lambda a, axis: np.sqrt(np.sum(a * a, axis=axis)),
    "safe_recip": _safe_recip,
    "maximum_const": lambda a, c: np.maximum(a, c),
    "logsumexp": _lse,
    "index_select": lambda a, index: a[np.arange(a.shape[0]), index],
    "place": _place,
    "broadcast_to": lambda a, shape: np.broadcast_to(a, shape).copy(),
    "sum_to": _unbroadcast,
    "reshape": lambda a, shape: a.reshape(shape),
}


# ops whose derivative is zero almost everywhere; treated as constants by grad
_PIECEWISE_CONSTANT = {"step"}


def _eval(op, values, attrs):
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            out = _KERNELS[op](*values, **attrs)
    except ValueError as exc:
        shapes = ", ".join(str(v.shape) for v in values)
        raise ShapeError(f"{op}: incompatible shapes {shapes}: {exc}") from None
    except FloatingPointError as exc:
        raise FloatingPointError(f"{op}: non-finite result ({exc})") from None
    return np.asarray(out, dtype=np.float64)


def _make(op, inputs, **attrs) -> Tensor:
    inputs = [as_tensor(i) for i in inputs]
    value = _eval(op, [i.data for i in inputs], attrs)
    if not _state["record"]:
        return Tensor(value)
    rg = op not in _PIECEWISE_CONSTANT and any(i.requires_grad for i in inputs)
    out = Tensor(value, op=op, inputs=inputs, attrs=attrs, requires_grad=rg)
    tape = _state["tape"]
    if tape is not None:
        tape.nodes.append(out)
    return out


# ---------------------------------------------------------------------------
# primitives

def add(a, b):
    return _make("add", (a, b))


def sub(a, b):
    return _make("sub", (a, b))


def mul(a, b):
    return _make("mul", (a, b))


def div(a, b):
    return _make("div", (a, b))


def neg(a):
    return _make("neg", (a,))


def scale(a, c: float):
    return _make("scale", (a,), c=float(c))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return _make("matmul", (a, b))


def transpose(a):
    return _make("transpose", (a,))


def relu(a):
    return _make("relu", (a,))


def relu_mask(a) -> Tensor:
    """Derivative of relu: 1 where a > 0, else 0 (the kink included). Not differentiable."""
    return step(a, 0.0)


def step(a, c: float = 0.0) -> Tensor:
    return _make("step", (a,), c=float(c))


def exp(a):
    return _make("exp", (a,))


def log(a):
    return _make("log", (a,))


def sum(a, axis=None, keepdims=False):  # noqa: A001
    return _make("sum", (a,), axis=axis, keepdims=keepdims)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


def dot(a, b, axis=-1):
    return sum(mul(a, b), axis=axis)


def norm(a, axis=None):
    """Euclidean norm; its derivative at the origin is taken as zero."""
    return _make("norm", (a,), axis=axis)


def _safe_recip_op(a):
    return _make("safe_recip", (a,))


def maximum_const(a, c: float):
    return _make("maximum_const", (a,), c=float(c))


def logsumexp(a, axis=-1):
    return _make("logsumexp", (a,), axis=axis)


def index_select(a, index):
    """Pick ``a[i, index[i]]`` for every row i of a 2-D tensor."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"index_select: shapes {a.shape} and index {index.shape}")
    return _make("index_select", (a,), index=index)


def _place_op(g, index, shape):
    return _make("place", (g,), index=index, shape=tuple(shape))


def broadcast_to(a, shape):
    return _make("broadcast_to", (a,), shape=tuple(shape))


def sum_to(a, shape):
    return _make("sum_to", (a,), shape=tuple(shape))


def reshape(a, shape):
    return _make("reshape", (a,), shape=tuple(shape))


# ---------------------------------------------------------------------------
# backward rules: (node, upstream) -> per-input gradient Tensors, built from primitives

def _expand(g, axis, shape):
    """Re-insert a reduced axis so ``g`` broadcasts back against ``shape``."""
    if axis is None:
        return broadcast_to(reshape(g, (1,) * len(shape)), shape)
    axes = (axis,) if isinstance(axis, int) else axis
    kept = list(shape)
    for ax in axes:
        kept[ax % len(shape)] = 1
    return broadcast_to(reshape(g, kept), shape)


def _vjp_add(n, g):
    a, b = n.inputs
    return sum_to(g, a.shape), sum_to(g, b.shape)


def _vjp_sub(n, g):
    a, b = n.inputs
    return sum_to(g, a.shape), sum_to(neg(g), b.shape)


def _vjp_mul(n, g):
    a, b = n.inputs
    return sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)


def _vjp_div(n, g):
    a, b = n.inputs
    ga = div(g, b)
    gb = neg(div(mul(g, a), mul(b, b)))
    return sum_to(ga, a.shape), sum_to(gb, b.shape)


def _vjp_norm(n, g):
    (a,) = n.inputs
    axis = n.attrs["axis"]
    inv = _expand(_safe_recip_op(n), axis, a.shape)
    return (mul(mul(_expand(g, axis, a.shape), a), inv),)


def _vjp_safe_recip(n, g):
    return (neg(mul(g, mul(n, n))),)


def _vjp_sum(n, g):
    (a,) = n.inputs
    axis = n.attrs["axis"]
    if n.attrs["keepdims"]:
        return (broadcast_to(g, a.shape),)
    return (_expand(g, axis, a.shape),)


def _vjp_lse(n, g):
    (a,) = n.inputs
    axis = n.attrs["axis"]
    soft = exp(sub(a, _expand(n, axis, a.shape)))
    return (mul(_expand(g, axis, a.shape), soft),)


_VJPS: dict[str, Callable] = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": lambda n, g: (neg(g),),
    "scale": lambda n, g: (scale(g, n.attrs["c"]),),
    "matmul": lambda n, g: (matmul(g, transpose(n.inputs[1])), matmul(transpose(n.inputs[0]), g)),
    "transpose": lambda n, g: (transpose(g),),
    "relu": lambda n, g: (mul(g, relu_mask(n.inputs[0])),),
    "exp": lambda n, g: (mul(g, n),),
    "log": lambda n, g: (div(g, n.inputs[0]),),
    "sum": _vjp_sum,
    "norm": _vjp_norm,
    "safe_recip": _vjp_safe_recip,
    "maximum_const": lambda n, g: (
        mul(g, step(n.inputs[0], n.attrs["c"])),),
    "logsumexp": _vjp_lse,
    "index_select": lambda n, g: (_place_op(g, n.attrs["index"], n.inputs[0].shape),),
    "place": lambda n, g: (index_select(g, n.attrs["index"]),),
    "broadcast_to": lambda n, g: (sum_to(g, n.inputs[0].shape),),
    "sum_to": lambda n, g: (broadcast_to(g, n.inputs[0].shape),),
    "reshape": lambda n, g: (reshape(g, n.inputs[0].shape),),
}


def _topo(output: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [output]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen.add(node.id)
        order.append(node)
        stack.extend(i for i in node.inputs if i.requires_grad)
    order.sort(key=lambda t: t.id, reverse=True)
    return order


def grad(output: Tensor, wrt: Sequence[Tensor] | Tensor, create_graph: bool = False,
         tape: Tape | None = None) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to leaf tensors ``wrt``.

    With ``create_graph`` the results are recorded nodes (on ``tape``, or the
    active tape) and may be differentiated again; otherwise they are detached.
    """
    if isinstance(wrt, Tensor):
        wrt = [wrt]
    if output.data.size != 1:
        raise GradError(f"grad needs a scalar output, got shape {output.shape}")
    for w in wrt:
        if w.op != "leaf":
            raise GradError(f"grad target {w!r} is not a leaf")
        if tape is not None and w not in tape:
            raise GradError(f"grad target {w!r} is not on the given tape")

    ctx = (tape or contextlib.nullcontext()) if create_graph else no_record()
    with ctx:
        grads: dict[int, Tensor] = {output.id: Tensor(np.ones_like(output.data))}
        if output.requires_grad:
            for node in _topo(output):
                g = grads.pop(node.id, None)
                if g is None or not node.inputs:
                    if g is not None:
                        grads[node.id] = g
                    continue
                parts = _VJPS[node.op](node, g)
                for inp, part in zip(node.inputs, parts):
                    if not inp.requires_grad:
                        continue
                    prev = grads.get(inp.id)
                    grads[inp.id] = part if prev is None else add(prev, part)
        out = []
        for w in wrt:
            g = grads.get(w.id)
            out.append(g if g is not None else as_tensor(np.zeros_like(w.data)))
    return out


def flatten_values(tensors: Iterable[Tensor]) -> np.ndarray:
    return np.concatenate([t.data.ravel() for t in tensors])
