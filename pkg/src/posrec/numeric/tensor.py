"""Dense tensors with reverse-mode differentiation on numpy arrays.

Every op returns a TensorNode holding the forward values and, when any input
requires gradients, an op record (parents + a closure pushing the output
adjoint to the parents). backward() walks the recorded graph once in reverse
topological order and accumulates adjoints, so calling it twice doubles them.

Float64 is the default dtype; float32 is an opt-in speed mode. Elementwise ops
follow standard numpy broadcasting; gradients of broadcast inputs are summed
back to the input shape.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import GraphError, NonFiniteError, ShapeMismatchError

DEFAULT_DTYPE = np.float64

_strict = False
_graph_enabled = True


def set_strict(flag: bool) -> bool:
    """Toggle NaN checking on every op output. Returns the previous setting."""
    global _strict
    previous = _strict
    _strict = bool(flag)
    return previous


@contextmanager
def no_graph():
    """Run forward passes without recording the graph (evaluation mode)."""
    global _graph_enabled
    previous = _graph_enabled
    _graph_enabled = False
    try:
        yield
    finally:
        _graph_enabled = previous


class OpRecord:
    """Backpointer from an op output to its inputs.

    push_grads(adjoint) returns one gradient array per parent, aligned with
    the parents tuple; None marks a parent that takes no gradient.
    """

    __slots__ = ("op", "parents", "push_grads")

    def __init__(self, op, parents, push_grads):
        self.op = op
        self.parents = parents
        self.push_grads = push_grads


class TensorNode:
    __slots__ = ("values", "adjoint", "requires_grad", "op_record", "name")

    def __init__(self, values, requires_grad=False, op_record=None, name=None):
        self.values = values
        self.adjoint = None
        self.requires_grad = requires_grad
        self.op_record = op_record
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def backward(self) -> None:
        backward(self)

    def zero_adjoint(self) -> None:
        self.adjoint = None

    def __repr__(self):
        tag = self.name or (self.op_record.op if self.op_record else "leaf")
        return f"TensorNode({tag}, shape={tuple(self.shape)}, grad={self.requires_grad})"

    # operator sugar; the named functions below do the work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, scale(_wrap(other, self.dtype), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(values, requires_grad=False, name=None, dtype=None):
    """Wrap array-like data as a leaf node."""
    arr = np.asarray(values, dtype=dtype or DEFAULT_DTYPE)
    return TensorNode(arr, requires_grad=requires_grad, name=name)


def parameter(values, name=None, dtype=None):
    return tensor(values, requires_grad=True, name=name, dtype=dtype)


def constant(values, name=None, dtype=None):
    return tensor(values, requires_grad=False, name=name, dtype=dtype)


def _wrap(x, dtype):
    if isinstance(x, TensorNode):
        return x
    return TensorNode(np.asarray(x, dtype=dtype))


def _make(op, values, parents, push_grads):
    if _strict and np.isnan(values).any():
        raise NonFiniteError(op)
    needs = _graph_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return TensorNode(values)
    return TensorNode(values, requires_grad=True, op_record=OpRecord(op, tuple(parents), push_grads))


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original input shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b):
    a = _wrap(a, DEFAULT_DTYPE)
    b = _wrap(b, a.dtype)
    try:
        out = a.values + b.values
    except ValueError:
        raise ShapeMismatchError("add", a.shape, b.shape) from None

    def push(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", out, (a, b), push)


def mul(a, b):
    a = _wrap(a, DEFAULT_DTYPE)
    b = _wrap(b, a.dtype)
    try:
        out = a.values * b.values
    except ValueError:
        raise ShapeMismatchError("mul", a.shape, b.shape) from None

    def push(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _make("mul", out, (a, b), push)


def scale(x, c: float):
    c = float(c)

    def push(g):
        return (g * c,)

    return _make("scale", x.values * c, (x,), push)


def add_const(x, c: float):
    c = float(c)

    def push(g):
        return (g,)

    return _make("add_const", x.values + c, (x,), push)


def pow_const(x, p: float):
    p = float(p)
    with np.errstate(invalid="ignore"):
        out = x.values**p

    def push(g):
        with np.errstate(invalid="ignore"):
            return (g * p * x.values ** (p - 1.0),)

    return _make("pow_const", out, (x,), push)


def matmul(a, b):
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    try:
        out = a.values @ b.values
    except ValueError:
        raise ShapeMismatchError("matmul", a.shape, b.shape) from None

    def push(g):
        ga = _unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape)
        return ga, gb

    return _make("matmul", out, (a, b), push)


def transpose(x, axes):
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def push(g):
        return (np.transpose(g, inverse),)

    return _make("transpose", np.transpose(x.values, axes), (x,), push)


def reshape(x, shape):
    original = x.shape

    def push(g):
        return (g.reshape(original),)

    return _make("reshape", x.values.reshape(shape), (x,), push)


def concat(nodes, axis: int = -1):
    """Concatenate along the last axis (the only one the model needs)."""
    if axis != -1:
        raise GraphError("concat supports only the last axis")
    nodes = list(nodes)
    sizes = [n.shape[-1] for n in nodes]
    out = np.concatenate([n.values for n in nodes], axis=-1)
    offsets = np.cumsum([0] + sizes)

    def push(g):
        return tuple(g[..., offsets[i] : offsets[i + 1]] for i in range(len(nodes)))

    return _make("concat", out, tuple(nodes), push)


def gather(table, ids):
    """Pick rows of a 2-D table by an integer index array of any shape."""
    if table.values.ndim != 2:
        raise ShapeMismatchError("gather", table.shape)
    idx = np.asarray(ids)
    out = table.values[idx]

    def push(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make("gather", out, (table,), push)


def mask_fill(x, keep, fill=-np.inf):
    """Keep entries where the boolean mask is true, write `fill` elsewhere."""
    keepb = np.asarray(keep, dtype=bool)
    out = np.where(keepb, x.values, x.dtype.type(fill))

    def push(g):
        return (np.where(keepb, g, 0.0),)

    return _make("mask_fill", out, (x,), push)


def dot_last(a, b):
    """Rowwise dot product over the last axis."""
    if a.shape != b.shape:
        raise ShapeMismatchError("dot_last", a.shape, b.shape)
    out = np.einsum("...d,...d->...", a.values, b.values)

    def push(g):
        return g[..., None] * b.values, g[..., None] * a.values

    return _make("dot_last", out, (a, b), push)


def einsum2(subscripts: str, a, b):
    """Two-operand einsum restricted so the adjoint is another einsum.

    Each label must be unique within its operand and appear in at least one
    of the other operand or the output.
    """
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sub_a, sub_b = lhs.split(",")
    for sub, node in ((sub_a, a), (sub_b, b)):
        if len(set(sub)) != len(sub):
            raise GraphError(f"einsum2: repeated label in '{sub}'")
        if len(sub) != node.values.ndim:
            raise ShapeMismatchError("einsum2", node.shape)
    if not set(sub_a) <= set(out_sub) | set(sub_b):
        raise GraphError(f"einsum2: labels of '{sub_a}' not recoverable")
    if not set(sub_b) <= set(out_sub) | set(sub_a):
        raise GraphError(f"einsum2: labels of '{sub_b}' not recoverable")
    try:
        out = np.einsum(subscripts, a.values, b.values)
    except ValueError:
        raise ShapeMismatchError("einsum2", a.shape, b.shape) from None

    def push(g):
        ga = np.einsum(f"{out_sub},{sub_b}->{sub_a}", g, b.values)
        gb = np.einsum(f"{out_sub},{sub_a}->{sub_b}", g, a.values)
        return ga, gb

    return _make("einsum2", out, (a, b), push)


def sum_all(x):
    out = np.asarray(x.values.sum())

    def push(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=False),)

    return _make("sum_all", out, (x,), push)


def mean_all(x):
    return scale(sum_all(x), 1.0 / x.values.size)


# ---------------------------------------------------------------------------
# nonlinearities


def softmax_last(x):
    """Softmax over the last axis; rows that are entirely -inf come out zero."""
    v = x.values
    rowmax = np.max(v, axis=-1, keepdims=True)
    dead = ~np.isfinite(rowmax)
    with np.errstate(invalid="ignore", over="ignore"):
        e = np.exp(v - np.where(dead, 0.0, rowmax))
    e = np.where(np.isfinite(e), e, 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = e / np.where(denom == 0.0, 1.0, denom)

    def push(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _make("softmax", out, (x,), push)


def sigmoid(x):
    v = x.values
    with np.errstate(over="ignore", invalid="ignore"):
        # the unselected where-branch may evaluate to inf/inf; NaN inputs
        # still propagate, since NaN >= 0 picks the exp(v) branch
        out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-v)), np.exp(v) / (1.0 + np.exp(v)))

    def push(g):
        return (g * out * (1.0 - out),)

    return _make("sigmoid", out, (x,), push)


def log(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.values)

    def push(g):
        return (g / x.values,)

    return _make("log", out, (x,), push)


def sin(x):
    def push(g):
        return (g * np.cos(x.values),)

    return _make("sin", np.sin(x.values), (x,), push)


def cos(x):
    def push(g):
        return (g * -np.sin(x.values),)

    return _make("cos", np.cos(x.values), (x,), push)


def leaky_relu(x, slope: float = 0.01):
    v = x.values
    out = np.where(v > 0, v, slope * v)

    def push(g):
        return (np.where(v > 0, g, slope * g),)

    return _make("leaky_relu", out, (x,), push)


def silu(x):
    v = x.values
    with np.errstate(over="ignore"):
        s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-v)), np.exp(v) / (1.0 + np.exp(v)))
    out = v * s

    def push(g):
        return (g * s * (1.0 + v * (1.0 - s)),)

    return _make("silu", out, (x,), push)


def clip(x, lo: float, hi: float):
    """Clamp values; gradient passes only through the interior."""
    v = x.values
    out = np.clip(v, lo, hi)
    inside = (v > lo) & (v < hi)

    def push(g):
        return (np.where(inside, g, 0.0),)

    return _make("clip", out, (x,), push)


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Normalize the last axis to zero mean, unit variance, then scale+shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatchError("layer_norm", x.shape, gain.shape, bias.shape)
    v = x.values
    mu = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv
    out = xhat * gain.values + bias.values

    def push(g):
        ghat = g * gain.values
        gx = inv * (
            ghat
            - ghat.mean(axis=-1, keepdims=True)
            - xhat * (ghat * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _make("layer_norm", out, (x, gain, bias), push)


def dropout(x, p: float, rng, train: bool):
    """Inverted dropout: mask from `rng` in train mode, identity otherwise."""
    if not train or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise GraphError(f"dropout rate {p} outside [0, 1)")
    keep = rng.uniform(x.shape) >= p
    factor = 1.0 / (1.0 - p)
    out = x.values * keep * factor

    def push(g):
        return (g * keep * factor,)

    return _make("dropout", out, (x,), push)


# ---------------------------------------------------------------------------
# pairwise interleave ops used by the rotation-style encodings


def interleave_last(a, b):
    """out[..., 2i] = a[..., i], out[..., 2i+1] = b[..., i]."""
    if a.shape != b.shape:
        raise ShapeMismatchError("interleave_last", a.shape, b.shape)
    h = a.shape[-1]
    out = np.empty(a.shape[:-1] + (2 * h,), dtype=a.dtype)
    out[..., 0::2] = a.values
    out[..., 1::2] = b.values

    def push(g):
        return g[..., 0::2], g[..., 1::2]

    return _make("interleave_last", out, (a, b), push)


def pair_swap(x):
    """(x0, x1) -> (-x1, x0) on every adjacent pair of the last axis."""
    if x.shape[-1] % 2:
        raise ShapeMismatchError("pair_swap", x.shape)
    v = x.values
    out = np.empty_like(v)
    out[..., 0::2] = -v[..., 1::2]
    out[..., 1::2] = v[..., 0::2]

    def push(g):
        gx = np.empty_like(g)
        gx[..., 1::2] = -g[..., 0::2]
        gx[..., 0::2] = g[..., 1::2]
        return (gx,)

    return _make("pair_swap", out, (x,), push)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: TensorNode) -> None:
    """Accumulate adjoints of everything `loss` depends on.

    Leaves with requires_grad get their .adjoint populated (lazily allocated);
    repeated calls keep accumulating, which callers must zero between steps.
    """
    if loss.values.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")

    order: list[TensorNode] = []
    seen = set()
    stack: list[tuple[TensorNode, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.op_record is not None:
            for parent in node.op_record.parents:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.adjoint = g if node.adjoint is None else node.adjoint + g
        if node.op_record is None:
            continue
        for parent, pg in zip(node.op_record.parents, node.op_record.push_grads(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
