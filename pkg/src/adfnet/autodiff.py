"""Reverse-mode differentiation over array-valued nodes.

Every backward rule is written with the same differentiable operations used
in the forward pass, so a gradient computed with ``create_graph=True`` is
itself a graph and can be differentiated once more (reverse-over-reverse).
Third-order requests are rejected.

The operations below accept plain arrays as well as :class:`Node` objects.
When no argument is a node they return a plain ``numpy`` array, which is how
the non-recording backward pass stays cheap.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import GraphUsageError, UnsupportedOrderError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_local = threading.local()


def _construction_order() -> int:
    return getattr(_local, "order", 0)


class Node:
    """One value in a recorded computation.

    ``order`` counts how many recorded backward passes the node depends on:
    0 for ordinary forward values, 1 for values built from first-order
    gradients.
    """

    __slots__ = ("value", "parents", "prim", "static", "kwargs", "order", "name")
    __array_ufunc__ = None  # make ndarray <op> Node dispatch to Node's reflected ops

    def __init__(self, value, parents=(), prim=None, kwargs=None, name=None, static=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.prim = prim
        self.static = static
        self.kwargs = kwargs or {}
        self.name = name
        order = _construction_order()
        for p in self.parents:
            if isinstance(p, Node) and p.order > order:
                order = p.order
        self.order = order

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        op = self.prim.name if self.prim is not None else "leaf"
        return f"Node({op}, shape={self.shape}, order={self.order})"

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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def shape_of(x) -> tuple:
    return x.shape if isinstance(x, Node) else np.shape(x)


def leaf(value, name=None) -> Node:
    """Wrap an array as a differentiable input."""
    return Node(np.array(value, dtype=np.float64), name=name)


class Primitive:
    """A differentiable operation.

    The first ``n_inputs`` positional arguments are arrays or nodes; any
    further positional arguments are static (shapes, exponents, slopes).
    ``forward`` maps plain arrays to a plain array. ``vjp(g, out, *args)``
    returns one cotangent per array argument (``None`` for arguments that
    are not differentiable); it must only use operations from this module
    so that it can be recorded.
    """

    def __init__(self, name: str, forward: Callable, vjp: Callable, n_inputs: int):
        self.name = name
        self.forward = forward
        self.vjp = vjp
        self.n_inputs = n_inputs

    def __call__(self, *args, **kwargs):
        arrays, static = args[: self.n_inputs], args[self.n_inputs:]
        if not any(isinstance(a, Node) for a in arrays):
            return self.forward(*[np.asarray(a, dtype=np.float64) for a in arrays], *static, **kwargs)
        vals = [a.value if isinstance(a, Node) else np.asarray(a, dtype=np.float64) for a in arrays]
        return Node(self.forward(*vals, *static, **kwargs), arrays, self, kwargs, static=static)


def primitive(name: str, forward: Callable, vjp: Callable, n_inputs: int = 1) -> Primitive:
    return Primitive(name, forward, vjp, n_inputs)


# -- shape plumbing -------------------------------------------------------


def _sum_to_fwd(x, shape):
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1
    )
    return np.sum(x, axis=axes, keepdims=True).reshape(shape)


sum_to = primitive(
    "sum_to",
    _sum_to_fwd,
    lambda g, out, x, shape: (broadcast_to(g, shape_of(x)),),
)

broadcast_to = primitive(
    "broadcast_to",
    lambda x, shape: np.broadcast_to(x, tuple(shape)).copy(),
    lambda g, out, x, shape: (sum_to(g, shape_of(x)),),
)

reshape = primitive(
    "reshape",
    lambda x, shape: np.reshape(x, tuple(shape)),
    lambda g, out, x, shape: (reshape(g, shape_of(x)),),
)

def _scatter_fwd(x, i, shape):
    out = np.zeros(tuple(shape))
    out[i] = x
    return out


index = primitive(
    "index",
    lambda x, i: np.array(x[i]),
    lambda g, out, x, i: (scatter(g, i, shape_of(x)),),
)

scatter = primitive(
    "scatter",
    _scatter_fwd,
    lambda g, out, x, i, shape: (index(g, i),),
)

transpose = primitive(
    "transpose",
    lambda x: np.transpose(x),
    lambda g, out, x: (transpose(g),),
)


def _unbroadcast(g, x):
    if x is None:
        return None
    if shape_of(g) == shape_of(x):
        return g
    return sum_to(g, shape_of(x))


def _sum_vjp(g, out, x, axis=None, keepdims=False):
    xs = shape_of(x)
    if axis is None:
        g = reshape(g, (1,) * len(xs))
    elif not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(xs) for a in axes)
        kept = tuple(1 if i in axes else n for i, n in enumerate(xs))
        g = reshape(g, kept)
    return (broadcast_to(g, xs),)


sum_ = primitive(
    "sum",
    lambda x, axis=None, keepdims=False: np.sum(x, axis=axis, keepdims=keepdims),
    _sum_vjp,
)


def mean(x, axis=None, keepdims=False):
    n = value_of(x).size if axis is None else value_of(x).shape[axis]
    return sum_(x, axis=axis, keepdims=keepdims) / float(n)


# -- arithmetic -----------------------------------------------------------

add = primitive(
    "add",
    np.add,
    lambda g, out, a, b: (_unbroadcast(g, a), _unbroadcast(g, b)),
    2,
)

sub = primitive(
    "sub",
    np.subtract,
    lambda g, out, a, b: (_unbroadcast(g, a), _unbroadcast(neg(g), b)),
    2,
)

mul = primitive(
    "mul",
    np.multiply,
    lambda g, out, a, b: (_unbroadcast(mul(g, b), a), _unbroadcast(mul(g, a), b)),
    2,
)

div = primitive(
    "div",
    np.divide,
    lambda g, out, a, b: (
        _unbroadcast(div(g, b), a),
        _unbroadcast(neg(div(mul(g, out), b)), b),
    ),
    2,
)

neg = primitive("neg", np.negative, lambda g, out, a: (neg(g),))


def _matmul_vjp(g, out, a, b):
    a_vec, b_vec = len(shape_of(a)) == 1, len(shape_of(b)) == 1
    if a_vec and b_vec:
        return mul(g, b), mul(g, a)
    if a_vec:
        n, m = shape_of(b)
        return matmul(g, transpose(b)), matmul(reshape(a, (n, 1)), reshape(g, (1, m)))
    if b_vec:
        n, m = shape_of(a)
        return matmul(reshape(g, (n, 1)), reshape(b, (1, m))), matmul(transpose(a), g)
    return matmul(g, transpose(b)), matmul(transpose(a), g)


matmul = primitive("matmul", np.matmul, _matmul_vjp, 2)

# -- elementwise functions -----------------------------------------------

exp = primitive("exp", np.exp, lambda g, out, x: (mul(g, out),))

log = primitive("log", np.log, lambda g, out, x: (div(g, x),))

sqrt = primitive("sqrt", np.sqrt, lambda g, out, x: (div(g, mul(2.0, out)),))

power = primitive(
    "power",
    lambda x, p: np.power(x, p),
    lambda g, out, x, p: (mul(g, mul(p, power(x, p - 1.0))),),
)


def square(x):
    return mul(x, x)


def _norm_pdf_fwd(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


norm_pdf = primitive(
    "norm_pdf",
    _norm_pdf_fwd,
    lambda g, out, x: (mul(g, neg(mul(x, out))),),
)

norm_cdf = primitive(
    "norm_cdf",
    special.ndtr,
    lambda g, out, x: (mul(g, norm_pdf(x)),),
)

# Piecewise-linear ops: the slope mask is a constant, so their second
# derivative is zero almost everywhere, which is exact.
clamp_min = primitive(
    "clamp_min",
    lambda x, lo: np.maximum(x, lo),
    lambda g, out, x, lo: (mul(g, (value_of(x) > lo).astype(np.float64)),),
)

leaky_relu = primitive(
    "leaky_relu",
    lambda x, c: np.where(x > 0.0, x, c * x),
    lambda g, out, x, c: (mul(g, np.where(value_of(x) > 0.0, 1.0, c)),),
)


def abs_smooth(x, eps=1e-8):
    """``sqrt(x**2 + eps**2)``, a differentiable stand-in for ``|x|``."""
    return sqrt(add(square(x), eps * eps))


# -- backward pass --------------------------------------------------------


def _topological(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Node) and id(p) not in seen:
                stack.append((p, False))
    return order


def gradient(output, inputs: Sequence[Node], create_graph: bool = False) -> list:
    """d(output)/d(input) for each input.

    ``output`` must hold a single element. Inputs the output does not depend
    on get exact zeros. With ``create_graph=True`` the returned gradients are
    nodes that can be differentiated again.
    """
    if not isinstance(output, Node):
        return [np.zeros(shape_of(x)) for x in inputs]
    if output.size != 1:
        raise GraphUsageError(f"gradient needs a scalar output, got shape {output.shape}")
    if create_graph and output.order >= 1:
        raise UnsupportedOrderError("derivatives beyond second order are not supported")
    if output.order >= 2:
        raise UnsupportedOrderError("derivatives beyond second order are not supported")

    topo = _topological(output)
    wanted = {id(x) for x in inputs}
    needs: dict[int, bool] = {}
    for node in topo:
        flag = id(node) in wanted
        if not flag:
            for p in node.parents:
                if isinstance(p, Node) and needs.get(id(p), False):
                    flag = True
                    break
        needs[id(node)] = flag

    adjoint: dict[int, object] = {id(output): np.ones(output.shape)}
    found: dict[int, object] = {}
    prev = _construction_order()
    _local.order = output.order + 1 if create_graph else prev
    try:
        for node in reversed(topo):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if id(node) in wanted:
                found[id(node)] = g
            if node.prim is None:
                continue
            if create_graph:
                args, out = node.parents, node
            else:
                args = [p.value if isinstance(p, Node) else p for p in node.parents]
                out = node.value
            grads = node.prim.vjp(g, out, *args, *node.static, **node.kwargs)
            for p, gp in zip(node.parents, grads):
                if gp is None or not isinstance(p, Node) or not needs[id(p)]:
                    continue
                if not create_graph:
                    gp = value_of(gp)
                acc = adjoint.get(id(p))
                adjoint[id(p)] = gp if acc is None else add(acc, gp)
    finally:
        _local.order = prev

    result = []
    for x in inputs:
        g = found.get(id(x))
        if g is None:
            g = np.zeros(shape_of(x))
        elif not create_graph:
            g = value_of(g)
        result.append(g)
    return result


def gradient_of_gradient(scalar, params: Sequence[Node]) -> list[np.ndarray]:
    """Parameter gradient of a scalar built from recorded first-order gradients."""
    if isinstance(scalar, Node) and scalar.order >= 2:
        raise UnsupportedOrderError("derivatives beyond second order are not supported")
    return gradient(scalar, params)
