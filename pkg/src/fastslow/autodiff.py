"""Reverse-mode automatic differentiation on dense float64 arrays.

A small tape-based engine: every operation produces a `Tensor` node that
remembers its parents and a vector-Jacobian product. `gradient` runs the
tape backwards in a fixed (reverse construction) order, so gradients are
bitwise reproducible. Evaluation inside `no_grad()` records nothing and is
safe to call from multiple threads on frozen parameters.

Beyond the usual elementwise/matmul primitives there are two structured
factors needed by the invertible layers: `expm_skew` (orthogonal matrices
via the matrix exponential of a skew-symmetric generator) and
`householder_orthogonal` (orthonormal columns from reflector vectors).
Both are built by composing tape primitives, so no custom adjoint is
required.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterator, Mapping

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "gradient",
    "check_gradient",
    "expm_skew",
    "householder_orthogonal",
    "matmul_count",
    "NonFiniteError",
    # tree utilities
    "tree_flatten",
    "tree_unflatten",
    "tree_map",
    "tree_zeros_like",
]

_GRAD_ENABLED = True

# global instrumentation counter (see matmul); used by tests to assert that
# forward and inverse network passes cost the same number of mat-vec products
_MATMUL_CALLS = 0


class NonFiniteError(FloatingPointError):
    """A tape value became NaN or infinite; message names the operation."""


def matmul_count() -> int:
    return _MATMUL_CALLS


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (pure/frozen evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense float64 array plus tape bookkeeping."""

    __slots__ = ("value", "parents", "vjp", "grad", "op")
    __array_ufunc__ = None  # keep numpy from hijacking mixed expressions

    def __init__(self, value, parents=(), vjp=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape})"

    # -- operators ----------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, k):
        return powi(self, k)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _node(value, parents, vjp, op) -> Tensor:
    if not _GRAD_ENABLED:
        return Tensor(value, op=op)
    return Tensor(value, parents=parents, vjp=vjp, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _node(out, (a, b), vjp, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return _node(out, (a, b), vjp, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return _node(out, (a, b), vjp, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value

    def vjp(g):
        return (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        )

    return _node(out, (a, b), vjp, "div")


def neg(a):
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def powi(a, k):
    a = as_tensor(a)
    k = float(k)
    out = a.value**k
    return _node(out, (a,), lambda g: (g * k * a.value ** (k - 1.0),), "pow")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def sin(a):
    a = as_tensor(a)
    return _node(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),), "sin")


def cos(a):
    a = as_tensor(a)
    return _node(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),), "cos")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def absolute(a):
    # subgradient 0 at the kink
    a = as_tensor(a)
    return _node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),), "abs")


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return _node(out, (a,), vjp, "sum")


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) / float(n)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.value.reshape(shape)
    return _node(out, (a,), lambda g: (g.reshape(a.value.shape),), "reshape")


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    out = np.swapaxes(a.value, ax1, ax2)
    return _node(out, (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def getitem(a, idx):
    a = as_tensor(a)
    out = a.value[idx]

    def vjp(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        return (ga,)

    return _node(out, (a,), vjp, "getitem")


def concat(parts, axis=-1):
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(parts), vjp, "concat")


def stack(parts, axis=0):
    ax = axis if axis >= 0 else parts[0].ndim + 1 + axis
    expanded = []
    for p in parts:
        p = as_tensor(p)
        shape = list(p.value.shape)
        shape.insert(ax, 1)
        expanded.append(reshape(p, tuple(shape)))
    return concat(expanded, axis=ax)


def matmul(a, b):
    global _MATMUL_CALLS
    _MATMUL_CALLS += 1
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av @ bv
    a1, b1 = av.ndim == 1, bv.ndim == 1

    def vjp(g):
        A = av.reshape(1, -1) if a1 else av
        B = bv.reshape(-1, 1) if b1 else bv
        if a1 and b1:
            gg = g.reshape(1, 1)
        elif a1:
            gg = np.expand_dims(g, -2)
        elif b1:
            gg = np.expand_dims(g, -1)
        else:
            gg = g
        ga = _unbroadcast(gg @ np.swapaxes(B, -1, -2), A.shape).reshape(av.shape)
        gb = _unbroadcast(np.swapaxes(A, -1, -2) @ gg, B.shape).reshape(bv.shape)
        return ga, gb

    return _node(out, (a, b), vjp, "matmul")


# ---------------------------------------------------------------------------
# structured orthogonal factors


def expm_skew(s: Tensor, check: bool = True) -> Tensor:
    """Matrix exponential of a skew-symmetric matrix (an orthogonal result).

    Scaling-and-squaring around a fixed order-10 Taylor core, assembled from
    tape primitives so the whole thing is differentiable by composition.
    Supports a leading batch dimension.
    """
    s = as_tensor(s)
    sv = s.value
    if sv.shape[-1] != sv.shape[-2]:
        raise ValueError("expm_skew expects a square matrix")
    skew_defect = np.max(np.abs(sv + np.swapaxes(sv, -1, -2))) if sv.size else 0.0
    if check and skew_defect > 1e-12:
        raise ValueError(f"input is not skew-symmetric (max|S + S^T| = {skew_defect:.3e})")
    norm = float(np.max(np.abs(sv))) * sv.shape[-1] if sv.size else 0.0
    if not math.isfinite(norm) or norm > 1e6:
        raise OverflowError("expm_skew: generator norm too large")
    # halve until the Taylor series at order 10 is accurate to ~1e-17
    n_sq = max(0, int(math.ceil(math.log2(max(norm, 1e-30) / 0.125))))
    a = s * (0.5**n_sq)
    eye = Tensor(np.broadcast_to(np.eye(sv.shape[-1]), sv.shape).copy())
    term = eye
    acc = eye
    for i in range(1, 11):
        term = matmul(term, a) * (1.0 / i)
        acc = acc + term
    for _ in range(n_sq):
        acc = matmul(acc, acc)
    return acc


def householder_orthogonal(vecs: Tensor, r: int | None = None) -> Tensor:
    """First r columns of the product of Householder reflectors.

    `vecs` has shape (r, M); row i is the reflector vector for H_i. A row
    whose norm is below 1e-30 acts as the identity reflector (removes the
    singularity at zero initialization). Returns an (M, r) matrix with
    orthonormal columns, differentiable where reflectors are nonzero.
    """
    vecs = as_tensor(vecs)
    nr, m = vecs.value.shape
    if r is None:
        r = nr
    if r > m:
        raise ValueError(f"cannot build {r} orthonormal columns in dimension {m}")
    q = Tensor(np.eye(m))
    for i in range(nr - 1, -1, -1):
        v = vecs[i]
        if float(np.dot(vecs.value[i], vecs.value[i])) < 1e-30:
            continue  # identity reflector convention
        vn2 = tsum(v * v)
        w = matmul(reshape(v, (1, m)), q)  # v^T Q
        q = q - reshape(v, (m, 1)) * w * (2.0 / vn2)
    return getitem(q, (slice(None), slice(0, r)))


# ---------------------------------------------------------------------------
# parameter trees: nested dicts of arrays/Tensors keyed by name


def tree_flatten(tree, prefix="") -> list[tuple[str, np.ndarray]]:
    """Flatten to a path-sorted list of (dotted path, leaf)."""
    out = []
    for key in sorted(tree):
        val = tree[key]
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(val, dict):
            out.extend(tree_flatten(val, path))
        else:
            out.append((path, val))
    return out


def tree_unflatten(items) -> dict:
    tree: dict = {}
    for path, val in items:
        node = tree
        parts = path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = val
    return tree


def tree_map(fn, tree):
    return {
        k: tree_map(fn, v) if isinstance(v, dict) else fn(v) for k, v in tree.items()
    }


def tree_zeros_like(tree):
    return tree_map(lambda x: np.zeros_like(value_of(x)), tree)


# ---------------------------------------------------------------------------
# gradients


def _backward(out: Tensor) -> None:
    """Accumulate .grad over the subgraph feeding `out` in a fixed order."""
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    out.grad = np.ones_like(out.value)
    for node in reversed(topo):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad = parent.grad + g


def gradient(f: Callable[[Mapping], Tensor], params: Mapping) -> tuple[float, dict]:
    """Value and reverse-mode gradient of a scalar function of a param tree.

    `f` receives a tree of the same structure with Tensor leaves and must
    return a scalar Tensor built from registered primitives. The returned
    gradient tree mirrors `params`; unused leaves get zeros.
    """
    leaves = tree_map(lambda x: Tensor(value_of(x)), params)
    out = f(leaves)
    if not isinstance(out, Tensor):
        raise TypeError("objective must return a Tensor (unregistered primitive in use?)")
    if out.value.size != 1:
        raise ValueError("gradient expects a scalar objective")
    if not np.all(np.isfinite(out.value)):
        raise NonFiniteError(f"objective produced a non-finite value at node '{out.op}'")
    _backward(out)
    grads = tree_map(
        lambda t: t.grad if t.grad is not None else np.zeros_like(t.value), leaves
    )
    return float(out.value), grads


def check_gradient(f: Callable[[Mapping], Tensor], params: Mapping, step: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central finite differences."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    base = tree_map(lambda x: np.array(value_of(x), copy=True), params)
    _, grads = gradient(f, base)
    flat = tree_flatten(base)
    gflat = dict(tree_flatten(grads))

    def feval():
        with no_grad():
            return float(f(tree_map(Tensor, base)).value)

    worst = 0.0
    for path, arr in flat:
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            fp = feval()
            arr[idx] = orig - step
            fm = feval()
            arr[idx] = orig
            fd = (fp - fm) / (2.0 * step)
            err = abs(gflat[path][idx] - fd) / (abs(fd) + 1e-12)
            worst = max(worst, err)
    return worst
