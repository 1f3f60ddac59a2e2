"""Dense float64 tensors with reverse-mode automatic differentiation.

Every learned module in the pipeline is built from the primitives here.
Tensors are row-major float64 and reject non-finite values at construction;
operations never mutate their inputs. The recorded graph (parent links plus
one vector-Jacobian closure per node) is the tape that `backward` replays in
reverse topological order, visiting each node exactly once.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse pass from a scalar node, accumulating into `.grad`."""
        if self.data.shape != ():
            raise ValueError("backward requires a scalar loss node")
        order = _topo_order(self)
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = _ensure(other)
        out = _from_op(self.data + other.data, (self, other))
        out._vjp = lambda g: (_unbroadcast(g, self.data.shape),
                              _unbroadcast(g, other.data.shape))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _from_op(-self.data, (self,))
        out._vjp = lambda g: (-g,)
        return out

    def __sub__(self, other):
        other = _ensure(other)
        out = _from_op(self.data - other.data, (self, other))
        out._vjp = lambda g: (_unbroadcast(g, self.data.shape),
                              _unbroadcast(-g, other.data.shape))
        return out

    def __rsub__(self, other):
        return _ensure(other).__sub__(self)

    def __mul__(self, other):
        other = _ensure(other)
        out = _from_op(self.data * other.data, (self, other))
        out._vjp = lambda g: (_unbroadcast(g * other.data, self.data.shape),
                              _unbroadcast(g * self.data, other.data.shape))
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _ensure(other)
        out = _from_op(self.data / other.data, (self, other))
        out._vjp = lambda g: (
            _unbroadcast(g / other.data, self.data.shape),
            _unbroadcast(-g * self.data / (other.data ** 2), other.data.shape),
        )
        return out

    def __rtruediv__(self, other):
        return _ensure(other).__truediv__(self)

    def __pow__(self, exponent: float):
        p = float(exponent)
        out = _from_op(self.data ** p, (self,))
        out._vjp = lambda g: (g * p * self.data ** (p - 1.0),)
        return out

    def __matmul__(self, other):
        other = _ensure(other)
        a, b = self.data, other.data
        if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
            raise ValueError(f"matmul supports 1D/2D operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        out = _from_op(a @ b, (self, other))

        def vjp(g):
            if a.ndim == 2 and b.ndim == 2:
                return g @ b.T, a.T @ g
            if a.ndim == 1 and b.ndim == 2:
                return b @ g, np.outer(a, g)
            if a.ndim == 2 and b.ndim == 1:
                return np.outer(g, b), a.T @ g
            return g * b, g * a  # dot product

        out._vjp = vjp
        return out

    # -- shape manipulation ---------------------------------------------

    @property
    def T(self) -> "Tensor":
        out = _from_op(self.data.T, (self,))
        out._vjp = lambda g: (g.T,)
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _from_op(self.data.reshape(shape), (self,))
        out._vjp = lambda g: (g.reshape(self.data.shape),)
        return out

    def __getitem__(self, key) -> "Tensor":
        out = _from_op(self.data[key], (self,))

        def vjp(g):
            full = np.zeros_like(self.data)
            full[key] += g
            return (full,)

        out._vjp = vjp
        return out

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = _from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.data.shape).copy(),)

        out._vjp = vjp
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- elementwise nonlinearities ---------------------------------------

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        out = _from_op(y, (self,))
        out._vjp = lambda g: (g * y,)
        return out

    def log(self) -> "Tensor":
        out = _from_op(np.log(self.data), (self,))
        out._vjp = lambda g: (g / self.data,)
        return out

    def sqrt(self) -> "Tensor":
        y = np.sqrt(self.data)
        out = _from_op(y, (self,))
        out._vjp = lambda g: (g * 0.5 / y,)
        return out

    def relu(self) -> "Tensor":
        keep = self.data > 0.0
        out = _from_op(np.where(keep, self.data, 0.0), (self,))
        out._vjp = lambda g: (g * keep,)
        return out

    def sigmoid(self) -> "Tensor":
        x = self.data
        y = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = _from_op(y, (self,))
        out._vjp = lambda g: (g * y * (1.0 - y),)
        return out

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = _from_op(y, (self,))
        out._vjp = lambda g: (g * (1.0 - y * y),)
        return out


# -- free functions over tensors ------------------------------------------


def relu(x: Tensor) -> Tensor:
    return x.relu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation kind: {kind!r}") from None


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Stable softmax along `axis`; masked-out positions get weight zero.

    `mask` is a boolean array broadcastable to `x`, True where a position may
    receive probability. Exclusion is additive -inf on the logits, applied
    before the max-subtraction so fully finite inputs stay overflow-free.
    Rows with empty support are rejected.
    """
    z = x.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not m.any(axis=axis).all():
            raise ValueError("softmax row has empty support under mask")
        z = np.where(m, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _from_op(y, (x,))

    def vjp(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    out._vjp = vjp
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    out = _from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis)
            for i in range(len(tensors))
        )

    out._vjp = vjp
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1D tensors of equal width into a 2D matrix."""
    return concat([r.reshape(1, -1) for r in rows], axis=0)


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2D table; gradients scatter-add back (ids may repeat)."""
    idx = np.asarray(ids, dtype=np.int64)
    out = _from_op(table.data[idx], (table,))

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    out._vjp = vjp
    return out


def take_at(x: Tensor, rows, cols) -> Tensor:
    """Gather x[rows[i], cols[i]] as a 1D tensor."""
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    out = _from_op(x.data[r, c], (x,))

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (r, c), g)
        return (full,)

    out._vjp = vjp
    return out


def scatter_matrix(rows, cols, values: Tensor, shape: tuple[int, int]) -> Tensor:
    """Build a matrix by accumulating values[i] at (rows[i], cols[i])."""
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    data = np.zeros(shape, dtype=np.float64)
    np.add.at(data, (r, c), values.data)
    out = _from_op(data, (values,))
    out._vjp = lambda g: (g[r, c],)
    return out


def kron_eye(w: Tensor, n: int) -> Tensor:
    """Kronecker product eye(n) (x) w, i.e. n copies of w on the block diagonal."""
    d0, d1 = w.data.shape
    out = _from_op(np.kron(np.eye(n), w.data), (w,))

    def vjp(g):
        blocks = g.reshape(n, d0, n, d1)
        return (blocks[np.arange(n), :, np.arange(n), :].sum(axis=0),)

    out._vjp = vjp
    return out


def pinv_rsqrt(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Elementwise x^(-1/2) with pseudo-inverse convention: 0 where x <= eps."""
    live = x.data > eps
    y = np.where(live, 1.0 / np.sqrt(np.where(live, x.data, 1.0)), 0.0)
    out = _from_op(y, (x,))
    out._vjp = lambda g: (np.where(live, -0.5 * y ** 3, 0.0) * g,)
    return out


def psd_pinv_sqrt(a: Tensor, eps: float = 1e-10) -> Tensor:
    """Matrix pseudo-inverse square root of a symmetric PSD matrix.

    Differentiable via the Daleckii-Krein formula on the eigendecomposition;
    eigenvalues at or below `eps` are treated as exact zeros.
    """
    lam, u = np.linalg.eigh(a.data)
    live = lam > eps
    f = np.where(live, 1.0 / np.sqrt(np.where(live, lam, 1.0)), 0.0)
    y = (u * f) @ u.T
    out = _from_op(y, (a,))

    def vjp(g):
        gs = 0.5 * (g + g.T)
        gt = u.T @ gs @ u
        fprime = np.where(live, -0.5 * f ** 3, 0.0)
        diff = lam[:, None] - lam[None, :]
        close = np.abs(diff) < 1e-12
        k = np.where(close, 0.0, (f[:, None] - f[None, :]) / np.where(close, 1.0, diff))
        k[np.diag_indices_from(k)] = fprime
        same = close & ~np.eye(len(lam), dtype=bool)
        k[same] = 0.5 * (fprime[:, None] + fprime[None, :])[same]
        return (u @ (k * gt) @ u.T,)

    out._vjp = vjp
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


def eye(n: int) -> Tensor:
    return Tensor(np.eye(n))


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


# -- gradient utilities ------------------------------------------------------


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def gradients(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar loss for each parameter; zeros when unreachable."""
    for p in params:
        p.grad = None
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# -- internals ----------------------------------------------------------------


def _check_finite(arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite (no NaN/Inf)")


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor.__new__(Tensor)
    arr = np.asarray(data, dtype=np.float64)
    _check_finite(arr)
    out.data = arr
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    out._vjp = None
    return out


def _ensure(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order
