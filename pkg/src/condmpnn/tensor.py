"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its inputs and a
closure computing the vector-Jacobian product. Node ids come from a global
monotonic counter, so an input always has a smaller id than its output and a
reverse sweep in descending id order is a valid topological order.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

__all__ = [
    "Tensor",
    "ComputationRecord",
    "DimensionError",
    "NonFiniteError",
    "settings",
    "finite_checks",
    "no_grad",
    "tensor",
    "parameter",
    "matmul",
    "hadamard",
    "concat",
    "activation",
    "transpose",
    "linear",
    "columns",
    "reshape",
    "exp",
    "cos",
    "sin",
    "abs_",
    "tsum",
    "mean",
    "gather",
    "segment_sum",
    "bilinear",
    "backward",
    "finite_difference_grad",
    "ACTIVATIONS",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


@dataclass
class _Settings:
    check_finite: bool = True
    grad_enabled: bool = True


settings = _Settings()

_ids = itertools.count()


@contextlib.contextmanager
def finite_checks(enabled: bool):
    """Temporarily toggle the NaN/Inf check performed after every op."""
    prev = settings.check_finite
    settings.check_finite = enabled
    try:
        yield
    finally:
        settings.check_finite = prev


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them for backward."""
    prev = settings.grad_enabled
    settings.grad_enabled = False
    try:
        yield
    finally:
        settings.grad_enabled = prev


class Tensor:
    """A dense row-major array of 64-bit reals plus autodiff bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "id", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None, _op: str = "leaf"):
        if _op == "leaf" or not isinstance(data, np.ndarray):
            self.data = np.array(data, dtype=np.float64, copy=True)
        else:
            self.data = np.require(data, np.float64, "C")  # keeps 0-d shape
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.op = _op
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # arithmetic sugar; broadcasting is limited to what numpy does for a
    # trailing-axis bias, reduced back in backward
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def tensor(data, name: str | None = None) -> Tensor:
    """Constant tensor (never receives a gradient)."""
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable, op: str) -> Tensor:
    if settings.check_finite and not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    track = settings.grad_enabled and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, _op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: cannot combine shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw, "add")


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        return (g * c,)

    return _make(a.data * c, (a,), bw, "scale")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise product with numpy broadcasting."""
    b = _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: cannot combine shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw, "mul")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise product of two tensors of identical shape."""
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes differ {a.shape} vs {b.shape}")

    def bw(g):
        return g * b.data, g * a.data

    return _make(a.data * b.data, (a, b), bw, "hadamard")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. ``a`` is rank 1 or 2, ``b`` is rank 1 or 2."""
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bw(g):
        A, B = a.data, b.data
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:  # (r,k)@(k,) -> (r,)
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:  # (k,)@(k,c) -> (c,)
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return _make(out, (a, b), bw, "matmul")


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ W.T + b`` for rows of ``x`` (or a single vector)."""
    if W.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"linear: weight {W.shape} cannot act on input {x.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match weight {W.shape}")
    out = x.data @ W.data.T
    if b is not None:
        out += b.data

    def bw(g):
        X = x.data
        if X.ndim == 1:
            gW = np.outer(g, X)
            gb = g
        else:
            gW = g.T @ X
            gb = g.sum(axis=0)
        gx = g @ W.data
        return (gx, gW) if b is None else (gx, gW, gb)

    parents = (x, W) if b is None else (x, W, b)
    return _make(out, parents, bw, "linear")


def columns(W: Tensor, start: int, stop: int) -> Tensor:
    """Column block ``W[:, start:stop]`` of a matrix (or trailing-axis block)."""
    if not 0 <= start <= stop <= W.shape[-1]:
        raise DimensionError(f"columns: [{start}, {stop}) outside width {W.shape[-1]}")

    def bw(g):
        out = np.zeros(W.shape)
        out[..., start:stop] = g
        return (out,)

    return _make(W.data[..., start:stop], (W,), bw, "columns")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects rank 2, got shape {a.shape}")

    def bw(g):
        return (g.T,)

    return _make(a.data.T, (a,), bw, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def bw(g):
        return (g.reshape(a.shape),)

    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    return _make(out, (a,), bw, "reshape")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis (per row for rank-2 operands)."""
    if a.ndim != b.ndim or a.ndim not in (1, 2):
        raise DimensionError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat: row counts differ {a.shape} vs {b.shape}")
    k = a.shape[-1]

    def bw(g):
        return g[..., :k], g[..., k:]

    return _make(np.concatenate([a.data, b.data], axis=-1), (a, b), bw, "concat")


def _silu(x):
    s = expit(x)
    return x * s, lambda: s * (1.0 + x * (1.0 - s))


def _relu(x):
    return np.maximum(x, 0.0), lambda: (x > 0).astype(np.float64)


def _identity(x):
    return x.copy(), lambda: np.ones_like(x)


# kind -> (value, thunk for the derivative); the derivative is built only
# when backward actually needs it
ACTIVATIONS = {"silu": _silu, "relu": _relu, "identity": _identity}


def activation(x: Tensor, kind: str) -> Tensor:
    """Point-wise activation; ``kind`` is one of silu, relu, identity."""
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None
    out, deriv = fn(x.data)

    def bw(g):
        return (g * deriv(),)

    return _make(out, (x,), bw, kind)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def bw(g):
        return (g * out,)

    return _make(out, (x,), bw, "exp")


def cos(x: Tensor) -> Tensor:
    def bw(g):
        return (-g * np.sin(x.data),)

    return _make(np.cos(x.data), (x,), bw, "cos")


def sin(x: Tensor) -> Tensor:
    def bw(g):
        return (g * np.cos(x.data),)

    return _make(np.sin(x.data), (x,), bw, "sin")


def abs_(x: Tensor) -> Tensor:
    def bw(g):
        return (g * np.sign(x.data),)

    return _make(np.abs(x.data), (x,), bw, "abs")


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis), dtype=np.float64)

    def bw(g):
        if axis is None:
            return (np.full(x.shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out, (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size

    def bw(g):
        return (np.full(x.shape, float(g) / n),)

    return _make(np.asarray(x.data.mean()), (x,), bw, "mean")


def _scatter_rows(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    # CSR rows are summed in ascending column (= row of ``values``) order
    m = values.shape[0]
    S = sp.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n, m))
    flat = values.reshape(m, -1)
    return np.asarray(S @ flat).reshape((n,) + values.shape[1:])


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows ``x[index]``; backward scatters gradients back."""
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        return (_scatter_rows(g, index, x.shape[0]),)

    return _make(x.data[index], (x,), bw, "gather")


def segment_sum(x: Tensor, index: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets given by ``index``.

    Rows are accumulated in their stored order, so the result is a fixed
    function of the row ordering.
    """
    index = np.asarray(index, dtype=np.intp)
    if index.shape[0] != x.shape[0]:
        raise DimensionError(f"segment_sum: {index.shape[0]} indices for {x.shape[0]} rows")
    if len(index) and (index.min() < 0 or index.max() >= num_segments):
        raise DimensionError(f"segment_sum: index outside [0, {num_segments})")
    out = _scatter_rows(x.data, index, num_segments)

    def bw(g):
        return (g[index],)

    return _make(out, (x,), bw, "segment_sum")


def bilinear(a: Tensor, W: Tensor, h: Tensor) -> Tensor:
    """Contract ``out[e,o] = sum_{b,i} a[e,b] W[b,o,i] h[e,i]``.

    Rank-1 ``a`` and ``h`` are treated as a single row.
    """
    single = a.ndim == 1
    A = a.data[None] if single else a.data
    H = h.data[None] if h.ndim == 1 else h.data
    if W.ndim != 3 or A.shape[1] != W.shape[0] or H.shape[1] != W.shape[2] or A.shape[0] != H.shape[0]:
        raise DimensionError(f"bilinear: incompatible shapes a={a.shape}, W={W.shape}, h={h.shape}")
    nb, no, ni = W.shape
    Wflat = W.data.reshape(nb * no, ni)
    hw = (H @ Wflat.T).reshape(-1, nb, no)          # (E, b, o)
    out = np.einsum("eb,ebo->eo", A, hw)

    def bw(g):
        G = g[None] if single else g
        ag = (A[:, :, None] * G[:, None, :]).reshape(-1, nb * no)  # (E, b*o)
        ga = np.einsum("eo,ebo->eb", G, hw)
        gW = (ag.T @ H).reshape(nb, no, ni)
        gh = ag @ Wflat
        if single:
            return ga[0], gW, gh[0]
        return ga, gW, gh

    return _make(out[0] if single else out, (a, W, h), bw, "bilinear")


@dataclass
class ComputationRecord:
    """The reachable sub-graph of a backward pass, ordered by node id."""

    nodes: list[Tensor] = field(default_factory=list)
    gradients: dict[int, np.ndarray] = field(default_factory=dict)

    def grad_of(self, t: Tensor) -> np.ndarray | None:
        return self.gradients.get(t.id)


def _collect(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen.add(node.id)
        order.append(node)
        stack.extend(p for p in node._parents if p.requires_grad and p.id not in seen)
    order.sort(key=lambda t: t.id)
    return order


def backward(root: Tensor) -> ComputationRecord:
    """Reverse sweep from a scalar root.

    Gradients accumulate into ``.grad`` of every reachable tensor that
    requires a gradient (existing ``.grad`` values are added to, as with
    gradient accumulation over several roots).
    """
    if root.size != 1:
        raise DimensionError(f"backward needs a scalar root, got shape {root.shape}")
    nodes = _collect(root)
    grads: dict[int, np.ndarray] = {root.id: np.ones(root.shape)}
    for node in reversed(nodes):
        g = grads.get(node.id)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = np.asarray(pg, dtype=np.float64)
    for node in nodes:
        if node._backward is None and node.id in grads:  # leaves
            node.grad = grads[node.id] if node.grad is None else node.grad + grads[node.id]
    return ComputationRecord(nodes=nodes, gradients=grads)


def finite_difference_grad(f: Callable[[], float], params: Iterable[Tensor],
                           eps: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of ``f`` w.r.t. each tensor in ``params``.

    ``f`` takes no arguments and reads the current parameter values; each
    coordinate is perturbed in place and restored.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = []
    for p in params:
        flat = p.data.reshape(-1)
        grad = np.zeros(flat.shape)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = float(f())
            flat[k] = orig - eps
            fm = float(f())
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite objective while perturbing {p!r}[{k}]")
            grad[k] = (fp - fm) / (2 * eps)
        out.append(grad.reshape(p.shape))
    return out
