"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Var` wraps a float64 array (a scalar is the 0-d case) together with
the local backward rule of the op that produced it.  Var ids are drawn from a
global counter at creation time, so sorting the reachable graph by descending
id is a valid reverse topological order.  That sort is all :func:`backward`
needs: every node is visited once, in O(graph) after the sort.

Every op checks its output for NaN/Inf and raises :class:`NonFiniteValue`
naming the op and node id; :func:`backward` does the same for gradients.
"""
from __future__ import annotations

import builtins
import itertools
from dataclasses import dataclass, field

import numpy as np

_ids = itertools.count()


class GradError(ArithmeticError):
    pass


class NonFiniteValue(GradError):
    def __init__(self, op, node_id):
        super().__init__(f"non-finite value produced by {op} (node {node_id})")
        self.op = op
        self.node_id = node_id


class NonFiniteGradient(GradError):
    def __init__(self, op, node_id):
        super().__init__(f"non-finite gradient flowing into {op} (node {node_id})")
        self.op = op
        self.node_id = node_id


class EmptyReduction(GradError, ValueError):
    pass


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "parents", "backward_fn", "op", "id", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, value, parents=(), backward_fn=None, op="leaf", requires_grad=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.id = next(_ids)
        self.name = name
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        if not np.all(np.isfinite(self.value)):
            raise NonFiniteValue(op, self.id)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self):
        return float(self.value)

    def __repr__(self):
        label = self.name or self.op
        if self.value.ndim == 0:
            return f"Var({label}={float(self.value):.6g})"
        return f"Var({label}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return take(self, idx)


def param(value, name=None):
    """A leaf that receives gradients."""
    return Var(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def const(value):
    return Var(value, requires_grad=False, op="const")


def _wrap(x):
    return x if isinstance(x, Var) else const(x)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(value, parents, backward_fn, op):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Var(value, op=op, requires_grad=False)
    return Var(value, parents, backward_fn, op)


# -- elementwise ---------------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
                 "mul")


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out = a.value / b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape),
                            _unbroadcast(-g * out / b.value, b.shape)),
                 "div")


def neg(a):
    a = _wrap(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def exp(a):
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = _wrap(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return _node(out, (a,), lambda g: (g / a.value,), "log")


def tanh(a):
    a = _wrap(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a):
    a = _wrap(a)
    out = _sigmoid(np.atleast_1d(a.value)).reshape(a.shape)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a):
    """log(1 + e^x), stable for large |x|."""
    a = _wrap(a)
    out = _softplus(a.value)
    return _node(out, (a,),
                 lambda g: (g * _sigmoid(np.atleast_1d(a.value)).reshape(a.shape),), "softplus")


def where(cond, a, b):
    """Select from ``a`` where ``cond`` (a constant boolean array) holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _wrap(a), _wrap(b)
    out = np.where(cond, a.value, b.value)
    zero = np.zeros((), dtype=np.float64)
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, zero), a.shape),
                            _unbroadcast(np.where(cond, zero, g), b.shape)),
                 "where")


# -- reductions ----------------------------------------------------------------


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    a = _wrap(a)
    out = a.value.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward, "sum")


def mean(a, axis=None):
    a = _wrap(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return sum(a, axis) / float(count)


def logsumexp(a, axis=None, where=None):
    """log Σ exp(a) over ``axis``, optionally restricted to a boolean mask.

    Uses max-subtraction, so large inputs do not overflow.  Entries outside the
    mask get exactly zero gradient.
    """
    if isinstance(a, (list, tuple)):
        a = stack(a)
        axis = 0 if axis is None else axis
    a = _wrap(a)
    x = a.value
    if x.size == 0:
        raise EmptyReduction("logsumexp over an empty collection")
    if where is not None:
        mask = np.broadcast_to(np.asarray(where, dtype=bool), x.shape)
        if not np.all(mask.any(axis=axis)):
            raise EmptyReduction("logsumexp with an empty mask")
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s
    if axis is None:
        out = out.reshape(())
    else:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _node(out, (a,), backward, "logsumexp")


def max(a, axis=None):  # noqa: A001
    """Maximum; the full subgradient goes to the first maximal element."""
    if isinstance(a, (list, tuple)):
        a = stack(a)
        axis = 0 if axis is None else axis
    a = _wrap(a)
    if a.value.size == 0:
        raise EmptyReduction("max over an empty collection")
    if axis is None:
        flat = int(np.argmax(a.value))
        out = a.value.reshape(-1)[flat]

        def backward(g):
            grad = np.zeros(a.value.size)
            grad[flat] = g
            return (grad.reshape(a.shape),)

        return _node(out, (a,), backward, "max")

    arg = np.expand_dims(np.argmax(a.value, axis=axis), axis)
    out = np.take_along_axis(a.value, arg, axis=axis).squeeze(axis)

    def backward(g):
        grad = np.zeros(a.shape)
        np.put_along_axis(grad, arg, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _node(out, (a,), backward, "max")


# -- linear algebra and structure ---------------------------------------------


def dot(a, b):
    """Inner product of two vectors."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("dot expects two vectors")
    return _node(np.dot(a.value, b.value), (a, b), lambda g: (g * b.value, g * a.value), "dot")


def einsum(spec, a, b):
    """Two-operand einsum without repeated indices inside an operand."""
    a, b = _wrap(a), _wrap(b)
    inputs, out_idx = spec.replace(" ", "").split("->")
    a_idx, b_idx = inputs.split(",")
    for own, other in ((a_idx, b_idx), (b_idx, a_idx)):
        if len(set(own)) != len(own) or not set(own) <= set(out_idx) | set(other):
            raise ValueError(f"unsupported einsum spec {spec!r}")
    out = np.einsum(spec, a.value, b.value)

    def backward(g):
        ga = np.einsum(f"{out_idx},{b_idx}->{a_idx}", g, b.value) if a.requires_grad else None
        gb = np.einsum(f"{out_idx},{a_idx}->{b_idx}", g, a.value) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward, "einsum")


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if b.ndim != 2:
        raise ValueError("matmul expects a 2-d right operand")
    letters = "abcdefgh"[: a.ndim - 1]
    return einsum(f"{letters}y,yz->{letters}z", a, b)


def take(a, idx):
    """numpy indexing (basic or advanced); gradient scatters with accumulation."""
    a = _wrap(a)
    out = a.value[idx]

    def backward(g):
        grad = np.zeros(a.shape)
        np.add.at(grad, idx, g)
        return (grad,)

    return _node(np.array(out), (a,), backward, "take")


def scatter(a, idx, shape):
    """Place ``a`` into a zero array of ``shape`` at ``idx`` (targets must be distinct)."""
    a = _wrap(a)
    out = np.zeros(shape)
    out[idx] = a.value
    return _node(out, (a,), lambda g: (np.array(g[idx]),), "scatter")


def stack(items, axis=0):
    items = [_wrap(x) for x in items]
    out = np.stack([x.value for x in items], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(items)))

    return _node(out, items, backward, "stack")


def reshape(a, shape):
    a = _wrap(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


# -- backward ------------------------------------------------------------------


class Gradients(dict):
    """Map from node id to ∂loss/∂node; also indexable by the Var itself."""

    def __getitem__(self, key):
        if isinstance(key, Var):
            if key.id not in self:
                return np.zeros(key.shape)
            key = key.id
        return super().__getitem__(key)


def _reachable(root):
    seen = {root.id: root}
    stack_ = [root]
    while stack_:
        node = stack_.pop()
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                seen[p.id] = p
                stack_.append(p)
    return sorted(seen.values(), key=lambda v: v.id, reverse=True)


def backward(loss, seed=None):
    """Propagate ∂loss/∂x to every node reachable from ``loss``.

    ``loss`` is normally a scalar; ``seed`` gives the upstream gradient for a
    non-scalar output.  Returns a :class:`Gradients` map covering all nodes,
    parameters included.
    """
    if seed is None:
        if loss.value.ndim != 0:
            raise ValueError("backward needs a scalar loss or an explicit seed")
        seed = np.ones(())
    grads = Gradients()
    grads[loss.id] = np.asarray(seed, dtype=np.float64)
    if not loss.requires_grad:
        return grads
    for node in _reachable(loss):
        g = dict.get(grads, node.id)
        if g is None or node.backward_fn is None:
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise NonFiniteGradient(node.op, node.id)
            prev = dict.get(grads, p.id)
            grads[p.id] = pg if prev is None else prev + pg
    return grads


# -- finite-difference checking ------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    tol: float
    entries: list = field(default_factory=list)

    @property
    def max_rel_error(self):
        return builtins.max((e.rel_error for e in self.entries), default=0.0)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol

    def summary(self):
        worst = builtins.max(self.entries, key=lambda e: e.rel_error, default=None)
        where_ = f" at {worst.name}{list(worst.index)}" if worst else ""
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {len(self.entries)} entries, max rel. error "
                f"{self.max_rel_error:.3e}{where_} (tol {self.tol:.1e})")


def relative_error(a, b, floor=1e-5):
    """|a - b| / max(|a|, |b|, floor); the floor keeps near-zero gradients meaningful."""
    return abs(a - b) / builtins.max(abs(a), abs(b), floor)


def grad_check(f, params, h=1e-5, tol=1e-4, floor=1e-5):
    """Compare reverse-mode gradients of ``f()`` with central differences.

    ``f`` rebuilds the expression from scratch on each call and must be
    deterministic given the parameter values.  ``params`` maps names to leaf
    Vars whose arrays are perturbed in place (and restored).
    """
    loss = f()
    grads = backward(loss)
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        analytic = grads[p]
        for index in np.ndindex(*p.shape):
            orig = p.value[index]
            p.value[index] = orig + h
            up = f().item()
            p.value[index] = orig - h
            down = f().item()
            p.value[index] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[index])
            report.entries.append(GradCheckEntry(name, index, a, numeric,
                                                 relative_error(a, numeric, floor)))
    return report
