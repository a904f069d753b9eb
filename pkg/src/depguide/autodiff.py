"""A deliberately small automatic-differentiation engine.

Two mechanisms, composable with each other:

* :class:`Dual` carries a value and a directional derivative (tangent).
  Values and tangents are floats or 1-d numpy arrays, and all arithmetic is
  elementwise, so a ``Dual`` over a vector is a bundle of dual scalars.
* :class:`Var` records an expression tape. The reverse pass walks the tape
  and accumulates adjoints.

Tape values may themselves be ``Dual``, so running the reverse pass over
dual inputs yields Hessian-vector products (forward-over-reverse). With
``create_graph=True`` the reverse pass is recorded on a new tape, which lets
a gradient field be differentiated again (reverse-over-reverse); that is
how :func:`scalar_trick_grad` differentiates ``grad(x) . v`` with ``v``
held constant.

Expressions are written with the free functions of this module (``exp``,
``log``, ``dot``, ...) which dispatch on argument type, so the same code
runs on numpy arrays, on duals and on tape variables.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class EvaluationError(ArithmeticError):
    """A non-finite value appeared while evaluating an expression."""

    def __init__(self, where: str, detail: str = "non-finite value"):
        self.where = where
        super().__init__(f"{detail} in '{where}'")


# --------------------------------------------------------------------------
# Dual numbers


class Dual:
    __slots__ = ("value", "tangent")
    __array_ufunc__ = None  # keep numpy from broadcasting over us

    def __init__(self, value, tangent=None):
        self.value = np.asarray(value, dtype=float)
        if tangent is None:
            self.tangent = np.zeros_like(self.value)
        else:
            self.tangent = np.asarray(tangent, dtype=float)
            if self.tangent.shape != self.value.shape:
                self.tangent = np.broadcast_to(self.tangent, self.value.shape).copy()

    def __repr__(self):
        return f"Dual({self.value!r}, {self.tangent!r})"

    @property
    def shape(self):
        return self.value.shape

    @staticmethod
    def _parts(other):
        if isinstance(other, Dual):
            return other.value, other.tangent
        return np.asarray(other, dtype=float), 0.0

    def __add__(self, other):
        if isinstance(other, Var):
            return NotImplemented
        v, t = self._parts(other)
        return Dual(self.value + v, self.tangent + t)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return NotImplemented
        v, t = self._parts(other)
        return Dual(self.value - v, self.tangent - t)

    def __rsub__(self, other):
        v, t = self._parts(other)
        return Dual(v - self.value, t - self.tangent)

    def __mul__(self, other):
        if isinstance(other, Var):
            return NotImplemented
        v, t = self._parts(other)
        return Dual(self.value * v, self.value * t + self.tangent * v)

    __rmul__ = __mul__

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def reciprocal(self):
        inv = 1.0 / self.value
        return Dual(inv, -self.tangent * inv * inv)

    def __truediv__(self, other):
        if isinstance(other, Var):
            return NotImplemented
        if isinstance(other, Dual):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __getitem__(self, idx):
        return Dual(self.value[idx], self.tangent[idx])

    def exp(self):
        e = np.exp(self.value)
        return Dual(e, e * self.tangent)

    def log(self):
        return Dual(np.log(self.value), self.tangent / self.value)

    def sqrt(self):
        s = np.sqrt(self.value)
        return Dual(s, 0.5 * self.tangent / s)

    def sum(self):
        return Dual(np.sum(self.value), np.sum(self.tangent))

    def logsumexp(self):
        value = _lse(self.value)
        w = np.exp(self.value - value)
        return Dual(value, np.sum(w * self.tangent))


DualScalar = Dual


def _lse(a):
    # log1p over the non-maximal terms keeps relative precision when they are tiny
    a = np.asarray(a, dtype=float).reshape(-1)
    k = int(np.argmax(a))
    w = np.exp(a - a[k])
    w[k] = 0.0
    return a[k] + np.log1p(np.sum(w))


# --------------------------------------------------------------------------
# Reverse-mode tape


def _shape(a):
    if isinstance(a, (Var, Dual)):
        return a.shape
    return np.shape(a)


def _finite(v) -> bool:
    if isinstance(v, Dual):
        return bool(np.all(np.isfinite(v.value)) and np.all(np.isfinite(v.tangent)))
    return bool(np.all(np.isfinite(v)))


class Var:
    """A node of the expression tape."""

    __slots__ = ("value", "parents", "backward", "name", "const")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward=None, name="leaf", const=False):
        if not isinstance(value, Dual):
            value = np.asarray(value, dtype=float)
        if not _finite(value):
            raise EvaluationError(name)
        self.value = value
        self.parents = parents
        self.backward = backward
        self.name = name
        self.const = const

    def __repr__(self):
        return f"Var<{self.name}>({self.value!r})"

    @property
    def shape(self):
        return _shape(self.value)

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return take(self, idx)


def _as_var(a) -> Var:
    if isinstance(a, Var):
        return a
    return Var(a, name="const", const=True)


def _node(name, value, parents, backward) -> Var:
    return Var(value, tuple(parents), backward, name)


def _any_var(*args) -> bool:
    return any(isinstance(a, Var) for a in args)


def _values(*args):
    return tuple(a.value if isinstance(a, Var) else a for a in args)


# --------------------------------------------------------------------------
# Dispatching primitives. Backward rules are written with these same
# primitives so that they also work when recording a second-order graph.


def add(a, b):
    if _any_var(a, b):
        va, vb = _values(a, b)
        return _node("add", va + vb, (_as_var(a), _as_var(b)), lambda g, a, b, out: (g, g))
    return a + b


def sub(a, b):
    if _any_var(a, b):
        va, vb = _values(a, b)
        return _node("sub", va - vb, (_as_var(a), _as_var(b)), lambda g, a, b, out: (g, neg(g)))
    return a - b


def mul(a, b):
    if _any_var(a, b):
        va, vb = _values(a, b)
        return _node("mul", va * vb, (_as_var(a), _as_var(b)),
                     lambda g, a, b, out: (mul(g, b), mul(g, a)))
    return a * b


def div(a, b):
    if _any_var(a, b):
        va, vb = _values(a, b)
        return _node("div", va / vb, (_as_var(a), _as_var(b)),
                     lambda g, a, b, out: (div(g, b), neg(div(mul(g, out), b))))
    return a / b


def neg(a):
    if isinstance(a, Var):
        return _node("neg", -a.value, (a,), lambda g, a, out: (neg(g),))
    return -a


def reciprocal(a):
    if isinstance(a, Var):
        return _node("reciprocal", reciprocal(a.value), (a,),
                     lambda g, a, out: (neg(mul(g, mul(out, out))),))
    if isinstance(a, Dual):
        return a.reciprocal()
    return 1.0 / np.asarray(a, dtype=float)


def exp(a):
    if isinstance(a, Var):
        return _node("exp", exp(a.value), (a,), lambda g, a, out: (mul(g, out),))
    if isinstance(a, Dual):
        return a.exp()
    return np.exp(a)


def log(a):
    if isinstance(a, Var):
        return _node("log", log(a.value), (a,), lambda g, a, out: (div(g, a),))
    if isinstance(a, Dual):
        return a.log()
    # out-of-domain inputs surface as EvaluationError via the finiteness check
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.log(a)


def sqrt(a):
    if isinstance(a, Var):
        return _node("sqrt", sqrt(a.value), (a,), lambda g, a, out: (div(mul(g, 0.5), out),))
    if isinstance(a, Dual):
        return a.sqrt()
    return np.sqrt(a)


def vsum(a):
    if isinstance(a, Var):
        n = a.shape
        return _node("sum", vsum(a.value), (a,), lambda g, a, out: (mul(g, np.ones(n)),))
    if isinstance(a, Dual):
        return a.sum()
    return np.sum(a)


def dot(a, b):
    if _any_var(a, b):
        va, vb = _values(a, b)
        return _node("dot", dot(va, vb), (_as_var(a), _as_var(b)),
                     lambda g, a, b, out: (mul(g, b), mul(g, a)))
    if isinstance(a, Dual) or isinstance(b, Dual):
        return vsum(a * b)
    return np.dot(a, b)


def logsumexp(a):
    """Max-shifted log-sum-exp of a 1-d vector."""
    if isinstance(a, Var):
        return _node("logsumexp", logsumexp(a.value), (a,),
                     lambda g, a, out: (mul(g, exp(sub(a, out))),))
    if isinstance(a, Dual):
        return a.logsumexp()
    return _lse(a)


def take(a, idx):
    """``a[idx]`` for an int or an integer index array."""
    if isinstance(a, Var):
        n = a.shape[0]
        return _node("take", a.value[idx], (a,), lambda g, a, out: (scatter(g, idx, n),))
    return a[idx]


def scatter(a, idx, n: int):
    """Zero vector of length ``n`` with ``a`` placed at ``idx``."""
    if isinstance(a, Var):
        return _node("scatter", scatter(a.value, idx, n), (a,), lambda g, a, out: (take(g, idx),))
    if isinstance(a, Dual):
        return Dual(scatter(a.value, idx, n), scatter(a.tangent, idx, n))
    out = np.zeros(n)
    out[idx] = a
    return out


def stack(items: Sequence):
    """Build a vector from scalars (constants, duals or tape nodes)."""
    if any(isinstance(a, Var) for a in items):
        vals = [a.value if isinstance(a, Var) else a for a in items]
        k = len(items)

        def backward(g, *args):
            return tuple(take(g, i) for i in range(k))

        return _node("stack", stack(vals), tuple(_as_var(a) for a in items), backward)
    if any(isinstance(a, Dual) for a in items):
        parts = [Dual._parts(a) for a in items]
        return Dual(np.array([p[0] for p in parts], dtype=float),
                    np.array([np.broadcast_to(p[1], ()) for p in parts], dtype=float))
    return np.array(items, dtype=float)


def _unbroadcast(g, shape):
    if _shape(g) == tuple(shape):
        return g
    if tuple(shape) == ():
        return vsum(g)
    # scalar adjoint flowing into a vector parent
    return mul(g, np.ones(shape))


def _toposort(root: Var) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(out: Var, wrt: Var, seed=1.0, create_graph: bool = False):
    """Adjoint of ``out`` with respect to the leaf ``wrt`` (zeros if unrelated)."""
    zero = np.zeros(wrt.shape)
    if not isinstance(out, Var):
        return zero
    adj = {id(out): seed}
    result = None
    for node in reversed(_toposort(out)):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node is wrt:
            result = g
            continue
        if not node.parents:
            continue
        if create_graph:
            args = node.parents + (node,)
        else:
            args = tuple(p.value for p in node.parents) + (node.value,)
        try:
            grads = node.backward(g, *args)
        except EvaluationError as exc:
            raise EvaluationError(f"d/d{node.name}: {exc.where}") from exc
        for p, pg in zip(node.parents, grads):
            if p.const:
                continue
            pg = _unbroadcast(pg, p.shape)
            prev = adj.get(id(p))
            adj[id(p)] = pg if prev is None else add(prev, pg)
    if result is None:
        return zero
    return result


# --------------------------------------------------------------------------
# Public differentiation API


@dataclass(frozen=True)
class ScalarFunction:
    """Maps a length-``dim`` vector to a scalar.

    ``fn`` must be written with this module's primitives (or plain operators)
    so that it accepts numpy arrays, :class:`Dual` vectors and :class:`Var`.
    """

    fn: Callable
    dim: int
    name: str = "f"

    def __call__(self, x):
        return self.fn(x)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        _check_dim(self, x)
        out = float(self.fn(x))
        if not np.isfinite(out):
            raise EvaluationError(self.name)
        return out


def _check_dim(f, x):
    dim = getattr(f, "dim", None)
    if dim is not None and np.shape(x) != (dim,):
        raise ValueError(f"{getattr(f, 'name', 'f')}: expected input of shape ({dim},), got {np.shape(x)}")


def _name(f) -> str:
    return getattr(f, "name", getattr(f, "__name__", "f"))


def gradient(f, x) -> np.ndarray:
    """Reverse-mode gradient of a scalar function at ``x``."""
    x = np.asarray(x, dtype=float)
    _check_dim(f, x)
    xv = Var(x, name="x")
    try:
        g = backward(f(xv), xv)
    except EvaluationError as exc:
        raise EvaluationError(f"{_name(f)}/{exc.where}") from exc
    return np.array(g, dtype=float)


def hvp(f, x, v) -> np.ndarray:
    """Hessian-vector product: the tangent of ``gradient(f, x + eps v)``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dim(f, x)
    if v.shape != x.shape:
        raise ValueError(f"direction shape {v.shape} does not match point shape {x.shape}")
    xv = Var(Dual(x, v), name="x")
    try:
        g = backward(f(xv), xv, seed=Dual(1.0, 0.0))
    except EvaluationError as exc:
        raise EvaluationError(f"{_name(f)}/{exc.where}") from exc
    if isinstance(g, Dual):
        return np.array(g.tangent, dtype=float)
    return np.zeros_like(x)


def gradient_field(f) -> Callable:
    """Return ``x -> grad f(x)`` that stays on the tape when ``x`` is a Var."""

    def field(x):
        if not isinstance(x, Var):
            return gradient(f, x)
        return backward(f(x), x, create_graph=True)

    field.name = f"grad({_name(f)})"
    field.dim = getattr(f, "dim", None)
    return field


def scalar_trick_grad(g_field: Callable, x, v_hat) -> np.ndarray:
    """Gradient of the scalar ``g_field(x) . v_hat`` with ``v_hat`` detached.

    For ``g_field = grad f`` this is the Hessian-vector product H v_hat,
    computed without forming H.
    """
    x = np.asarray(x, dtype=float)
    v_hat = np.array(v_hat.value if isinstance(v_hat, Var) else v_hat, dtype=float)
    if v_hat.shape != x.shape:
        raise ValueError(f"constant vector shape {v_hat.shape} does not match point shape {x.shape}")
    xv = Var(x, name="x")
    try:
        gx = g_field(xv)
        if _shape(gx) != x.shape:
            raise ValueError(f"field returned shape {_shape(gx)}, expected {x.shape}")
        g = backward(dot(gx, v_hat), xv)
    except EvaluationError as exc:
        raise EvaluationError(f"{_name(g_field)}/{exc.where}") from exc
    return np.array(g, dtype=float)
