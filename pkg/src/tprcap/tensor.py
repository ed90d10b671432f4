"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the upstream gradient to one gradient per parent. The
graph is rebuilt on every forward pass, so unrolling a caption of any length
is just a Python loop.

Shapes are strict: elementwise ops demand identical shapes. The only
broadcast is :func:`add_bias`, which adds a trailing-shape bias to every
leading row. Model code works on row batches ``(B, n)`` and multiplies by
weights stored ``(out, in)`` through :func:`linear`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class RankError(ValueError):
    """Operand has the wrong number of axes."""


class GraphError(RuntimeError):
    """Misuse of the differentiation graph."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording graph nodes."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _node(out: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    t = Tensor(out)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    return t


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a ``(m, k)`` and a ``(k, n)`` tensor."""
    if a.ndim != 2 or b.ndim != 2:
        raise RankError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def back(g):
        return g @ B.T, A.T @ g

    return _node(A @ B, (a, b), back)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """Row-batch projection ``x @ w.T`` for ``x (B, in)`` and ``w (out, in)``."""
    if x.ndim != 2 or w.ndim != 2:
        raise RankError(f"linear expects rank-2 operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input width {x.shape} does not match weight {w.shape}")
    X, W = x.data, w.data

    def back(g):
        return g @ W, g.T @ X

    return _node(X @ W.T, (x, w), back)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise RankError(f"transpose needs rank >= 2, got {a.shape}")
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def outer(a: Tensor, b: Tensor) -> Tensor:
    """Outer product ``a[..., i] * b[..., j]``.

    Both operands may be plain vectors, or ``a`` may carry a leading batch
    axis with ``b`` either a shared vector or batched alike.
    """
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise RankError(f"outer expects vectors or row batches, got {a.shape} and {b.shape}")
    if a.ndim == 1 and b.ndim == 2:
        raise RankError("outer: batched right operand needs a batched left operand")
    if a.ndim == 2 and b.ndim == 2 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"outer batch sizes differ: {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    out = A[..., :, None] * B[..., None, :]

    def back(g):
        ga = np.einsum("...ij,...j->...i", g, B) if b.ndim == a.ndim else g @ B
        if a.ndim == b.ndim:
            gb = np.einsum("...ij,...i->...j", g, A)
        else:
            gb = np.einsum("bij,bi->j", g, A)
        return ga, gb

    return _node(out, (a, b), back)


def matvec(M: Tensor, x: Tensor) -> Tensor:
    """``M @ x`` for ``(r, c)``/``(c,)`` or row-batched ``(B, r, c)``/``(B, c)``."""
    if M.ndim != x.ndim + 1 or M.ndim not in (2, 3):
        raise RankError(f"matvec rank mismatch: {M.shape} and {x.shape}")
    if M.shape[-1] != x.shape[-1] or M.shape[:-2] != x.shape[:-1]:
        raise DimensionError(f"matvec extents differ: {M.shape} and {x.shape}")
    A, X = M.data, x.data
    out = np.einsum("...ij,...j->...i", A, X)

    def back(g):
        return g[..., :, None] * X[..., None, :], np.einsum("...ij,...i->...j", A, g)

    return _node(out, (M, x), back)


def contract3(C: Tensor, q: Tensor) -> Tensor:
    """``result[i, j] = sum_l C[i, j, l] * q[l]``; ``q`` may be a row batch."""
    if C.ndim != 3 or q.ndim not in (1, 2):
        raise RankError(f"contract3 expects (d, d, k) and (k,) or (B, k), got {C.shape}, {q.shape}")
    if C.shape[2] != q.shape[-1]:
        raise DimensionError(f"contract3 extent mismatch: {C.shape} with {q.shape}")
    r, c, k = C.shape
    C2 = C.data.reshape(r * c, k)
    Q = q.data
    out = (Q @ C2.T).reshape(Q.shape[:-1] + (r, c))

    def back(g):
        g2 = g.reshape(Q.shape[:-1] + (r * c,))
        if Q.ndim == 1:
            gC = np.outer(g2, Q)
        else:
            gC = g2.T @ Q
        return gC.reshape(r, c, k), g2 @ C2

    return _node(out, (C, q), back)


def vec(M: Tensor) -> Tensor:
    """Column-stacking vectorization; batched over a leading axis for rank 3."""
    if M.ndim not in (2, 3):
        raise RankError(f"vec expects a matrix or batch of matrices, got {M.shape}")
    r, c = M.shape[-2:]
    lead = M.shape[:-2]
    out = np.swapaxes(M.data, -1, -2).reshape(lead + (r * c,))

    def back(g):
        return (np.swapaxes(g.reshape(lead + (c, r)), -1, -2),)

    return _node(out, (M,), back)


def unvec(x: Tensor, rows: int, cols: int) -> Tensor:
    """Inverse of :func:`vec`."""
    lead = x.shape[:-1]
    if x.shape[-1] != rows * cols:
        raise DimensionError(f"cannot unvec {x.shape} into {rows}x{cols}")
    out = np.swapaxes(x.data.reshape(lead + (cols, rows)), -1, -2)

    def back(g):
        return (np.swapaxes(g, -1, -2).reshape(lead + (rows * cols,)),)

    return _node(np.ascontiguousarray(out), (x,), back)


# --------------------------------------------------------------------------
# elementwise


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes differ {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _node(A * B, (a, b), lambda g: (g * B, g * A))


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    try:
        fn = {"mul": mul, "add": add, "sub": sub}[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def add_n(terms: Iterable[Tensor]) -> Tensor:
    terms = list(terms)
    if not terms:
        raise ValueError("add_n of nothing")
    for t in terms[1:]:
        _same_shape(terms[0], t, "add_n")
    out = terms[0].data.copy()
    for t in terms[1:]:
        out += t.data
    return _node(out, terms, lambda g: tuple(g for _ in terms))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add ``b`` to every leading slice of ``x`` (``x.shape[1:] == b.shape``)."""
    if x.shape[1:] != b.shape:
        raise DimensionError(f"add_bias: {b.shape} does not match trailing shape of {x.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def scale(a: Tensor, k: float) -> Tensor:
    return _node(a.data * k, (a,), lambda g: (g * k,))


def sigmoid(x: Tensor) -> Tensor:
    X = x.data
    # split by sign so exp never overflows
    out = np.empty_like(X)
    pos = X >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-X[pos]))
    ex = np.exp(X[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (x,), back)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _node(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"sigmoid": sigmoid, "tanh": tanh, "softmax": softmax}[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# --------------------------------------------------------------------------
# gathers and reductions


def take_columns(W: Tensor, ids: Sequence[int]) -> Tensor:
    """Rows of the result are columns ``W[:, ids]``; gradients scatter-add."""
    idx = np.asarray(ids, dtype=np.int64)
    if W.ndim != 2:
        raise RankError(f"take_columns expects a matrix, got {W.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= W.shape[1]):
        raise IndexError(f"column id out of range for {W.shape[1]} columns")
    shape = W.shape

    def back(g):
        gw = np.zeros(shape)
        np.add.at(gw.T, idx, g)
        return (gw,)

    return _node(W.data[:, idx].T.copy(), (W,), back)


def pick(x: Tensor, ids: Sequence[int]) -> Tensor:
    """``out[b] = x[b, ids[b]]`` for a row batch ``x (B, V)``."""
    idx = np.asarray(ids, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        gx[rows, idx] = g
        return (gx,)

    return _node(x.data[rows, idx], (x,), back)


def total(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar."""
    shape = x.shape
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def weighted_sum(x: Tensor, w: np.ndarray) -> Tensor:
    """Scalar ``sum(x * w)`` with a constant weight array of the same shape."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != x.shape:
        raise DimensionError(f"weighted_sum: weights {w.shape} vs {x.shape}")
    return _node(np.asarray((x.data * w).sum()), (x,), lambda g: (g * w,))


# --------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate ``d loss / d leaf`` into every trainable leaf's ``.grad``.

    Returns a map from each reached leaf to the gradient contributed by this
    call. Calling it twice on the same root raises :class:`GraphError`.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward already run on this graph; rebuild it with a new forward pass")
    loss._consumed = True
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    contributed: dict[Tensor, np.ndarray] = {}
    visited = 0
    for node in reversed(order):
        g = grads.pop(id(node), None)
        visited += 1
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            contributed[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    backward.last_visit_count = visited  # type: ignore[attr-defined]
    return contributed


def finite_diff(loss_fn: Callable[[], float], params: Sequence[Tensor], eps: float = 1e-5,
                coords: dict[Tensor, np.ndarray] | None = None) -> dict[Tensor, np.ndarray]:
    """Central differences ``(f(p+eps) - f(p-eps)) / 2eps`` per coordinate.

    ``coords`` optionally restricts each tensor to a set of flat indices; the
    returned arrays then hold one entry per requested index.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out: dict[Tensor, np.ndarray] = {}
    for p in params:
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size) if coords is None else np.asarray(coords[p])
        est = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn())
            flat[i] = orig - eps
            down = float(loss_fn())
            flat[i] = orig
            est[n] = (up - down) / (2 * eps)
        out[p] = est if coords is not None else est.reshape(p.shape)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor absorbs differencing noise near zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
