"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations record themselves on the innermost active :class:`Tape`. A tape is
meant to live for a single training step; call :meth:`Tape.backward` once per
scalar loss. Only nodes reachable from the loss through recorded edges are
visited, so anything hidden behind :func:`stop_gradient` is never touched.

    >>> x = Tensor([2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = stop_gradient(x) * x
    >>> tape.grad(y, [x])[0]
    array([2.])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "stop_gradient",
    "clamp_upper",
    "row_logsumexp_excluding_self",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "sum",
    "mean",
    "row_max",
    "l2_normalize_rows",
    "layer_norm",
    "gelu",
    "softmax_rows",
    "transpose",
    "reshape",
    "concat_rows",
    "gather_rows",
    "where",
]


class NonFiniteError(FloatingPointError):
    """A forward value became NaN or infinite."""


_local = threading.local()


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def _current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense real array that can take part in gradient recording."""

    __slots__ = ("values", "requires_grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(values, Tensor):
            values = values.values
        arr = np.asarray(values, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.node: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float(self.values)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.values!r}{flag})"

    def __len__(self) -> int:
        return len(self.values)

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


@dataclass
class _Node:
    tag: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Append-only computation record.

    ``nodes`` is in creation order, which is a topological order because an
    operation can only consume tensors that already exist.
    """

    nodes: list[_Node] = field(default_factory=list)
    check_finite: bool = True

    def __enter__(self) -> Tape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def _record(self, tag, inputs, output, backward) -> None:
        output.node = len(self.nodes)
        self.nodes.append(_Node(tag, tuple(inputs), output, backward))

    def _owns(self, t: Tensor) -> bool:
        return t.node is not None and t.node < len(self.nodes) and self.nodes[t.node].output is t

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        """Reverse sweep from ``loss``.

        Returns a mapping ``id(leaf) -> gradient`` holding only the leaves
        (``requires_grad`` tensors not produced by a recorded op) that the loss
        actually depends on.
        """
        if seed is None:
            if loss.values.size != 1:
                raise ValueError("backward needs a scalar loss or an explicit seed")
            seed = np.ones_like(loss.values)
        if not self._owns(loss):
            return {}

        reachable = self._reachable(loss.node)
        grads: dict[int, np.ndarray] = {loss.node: np.asarray(seed, dtype=loss.dtype)}
        leaves: dict[int, np.ndarray] = {}
        for idx in sorted(reachable, reverse=True):
            node = self.nodes[idx]
            g_out = grads.pop(idx, None)
            if g_out is None:
                continue
            in_grads = node.backward(g_out)
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                if self._owns(inp):
                    key, store = inp.node, grads
                else:
                    key, store = id(inp), leaves
                if key in store:
                    store[key] = store[key] + g
                else:
                    store[key] = g
        return leaves

    def grad(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of ``loss`` for each tensor in ``wrt`` (zeros if unreached)."""
        found = self.backward(loss)
        return [found.get(id(t), np.zeros_like(t.values)) for t in wrt]

    def _reachable(self, start: int) -> set[int]:
        seen = {start}
        stack = [start]
        while stack:
            node = self.nodes[stack.pop()]
            for inp in node.inputs:
                if inp.requires_grad and self._owns(inp) and inp.node not in seen:
                    seen.add(inp.node)
                    stack.append(inp.node)
        return seen


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(tag: str, values: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = _current_tape()
    check = tape.check_finite if tape is not None else True
    if check and not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{tag} produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=needs and tape is not None)
    if out.requires_grad:
        tape._record(tag, inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(tag: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"{tag}: incompatible shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------------------
# gradient control


def stop_gradient(x: Tensor) -> Tensor:
    """Identity on values; contributes nothing on the backward pass."""
    x = _as_tensor(x)
    return Tensor(x.values, requires_grad=False)


def clamp_upper(x: Tensor, c: float) -> Tensor:
    """Elementwise ``min(x, c)``.

    The gradient passes where ``x <= c`` (the boundary counts as unsaturated)
    and is exactly zero where ``x > c``.
    """
    x = _as_tensor(x)
    if not np.isfinite(c):
        raise ValueError("clamp_upper needs a finite cap")
    passes = x.values <= c
    out = np.where(passes, x.values, np.asarray(c, dtype=x.dtype))
    return _make("clamp_upper", out, [x], lambda g: (g * passes,))


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return _make("add", a.values + b.values, [a, b],
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make("sub", a.values - b.values, [a, b],
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.values, b.values
    return _make("mul", av * bv, [a, b],
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    av, bv = a.values, b.values
    out = av / bv
    return _make("div", out, [a, b],
                 lambda g: (_unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make("neg", -a.values, [a], lambda g: (-g,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.values)
    return _make("exp", out, [a], lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.values)
    return _make("log", out, [a], lambda g: (g / a.values,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.values)
    return _make("sqrt", out, [a], lambda g: (g / (2.0 * out),))


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    x = a.values
    cdf = 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return _make("gelu", x * cdf, [a], lambda g: (g * (cdf + x * pdf),))


def where(mask, a, b) -> Tensor:
    """Select ``a`` where ``mask`` is true, else ``b``. ``mask`` is constant."""
    a, b = _as_tensor(a), _as_tensor(b)
    mask = np.asarray(mask.values if isinstance(mask, Tensor) else mask, dtype=bool)
    out = np.where(mask, a.values, b.values)
    return _make("where", out, [a, b],
                 lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                            _unbroadcast(np.where(mask, 0.0, g), b.shape)))


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.values.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", out, [a], back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.values.mean(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make("mean", out, [a], back)


def row_max(a, exclude_self: bool = False) -> Tensor:
    """Maximum of each row of a 2-D tensor.

    Gradient goes to the winning entry only; ties resolve to the lowest
    column index. With ``exclude_self`` the diagonal is skipped (square input).
    """
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"row_max expects a matrix, got shape {a.shape}")
    vals = a.values
    if exclude_self:
        if vals.shape[0] != vals.shape[1]:
            raise ValueError("exclude_self needs a square matrix")
        if vals.shape[1] < 2:
            raise ValueError("exclude_self needs at least two columns")
        vals = vals.copy()
        np.fill_diagonal(vals, -np.inf)
    idx = np.argmax(vals, axis=1)
    rows = np.arange(vals.shape[0])
    out = a.values[rows, idx]

    def back(g):
        full = np.zeros_like(a.values)
        full[rows, idx] = g
        return (full,)

    return _make("row_max", out, [a], back)


def row_logsumexp_excluding_self(G) -> Tensor:
    """``out[u] = log(sum_{k != u} exp(G[u, k]))`` without an internal shift.

    Callers are expected to have shifted rows already; an argument large
    enough to overflow ``exp`` raises instead of silently returning inf.
    """
    G = _as_tensor(G)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {G.shape}")
    n = G.shape[0]
    if n < 2:
        raise ValueError("need at least two columns to exclude the diagonal")
    off = ~np.eye(n, dtype=bool)
    limit = np.log(np.finfo(G.dtype).max) - np.log(n)
    if np.max(G.values[off]) > limit:
        raise OverflowError(
            f"exp argument {np.max(G.values[off]):.4g} exceeds safe range {limit:.4g}; "
            "shift rows before reducing"
        )
    e = np.where(off, np.exp(np.where(off, G.values, 0.0)), 0.0)
    s = e.sum(axis=1)
    out = np.log(s)
    weights = e / s[:, None]
    return _make("row_logsumexp_excluding_self", out, [G], lambda g: (weights * g[:, None],))


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    out = av @ bv

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make("matmul", out, [a, b], back)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    a = _as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ValueError("transpose needs at least 2 dimensions")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.values, axes), [a],
                 lambda g: (np.transpose(g, inverse),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    return _make("reshape", a.values.reshape(shape), [a], lambda g: (g.reshape(a.shape),))


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    tails = {t.shape[1:] for t in tensors}
    if len(tails) != 1:
        raise ValueError(f"concat_rows: trailing shapes differ: {sorted(tails)}")
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]
    out = np.concatenate([t.values for t in tensors], axis=0)
    return _make("concat_rows", out, tensors, lambda g: tuple(np.split(g, splits, axis=0)))


def gather_rows(a, index) -> Tensor:
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def back(g):
        full = np.zeros_like(a.values)
        np.add.at(full, index, g)
        return (full,)

    return _make("gather_rows", a.values[index], [a], back)


# ---------------------------------------------------------------------------
# composite-but-fused


def l2_normalize_rows(a) -> Tensor:
    """Divide each row (last axis) by its Euclidean norm."""
    a = _as_tensor(a)
    x = a.values
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise ZeroDivisionError("cannot normalize a zero-norm row")
    y = x / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _make("l2_normalize_rows", y, [a], back)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis (max-shifted internally)."""
    a = _as_tensor(a)
    x = a.values
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax_rows", y, [a], back)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm: gain/bias must have shape ({d},)")
    x = a.values
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.values + bias.values

    def back(g):
        gx = g * gain.values
        ga = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return ga, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make("layer_norm", out, [a, gain, bias], back)
