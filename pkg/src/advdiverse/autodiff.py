"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation on :class:`Tensor` records its parents and a backward
closure, so a scalar result can be differentiated with :func:`grad` with
respect to any tensor it was computed from.  Tensors are immutable.

Only scalar-with-tensor broadcasting is supported.  :func:`sign` and
:func:`clip` return detached leaves: differentiating through them raises
:class:`~advdiverse.errors.GraphError` instead of silently passing the
gradient straight through.
"""

from __future__ import annotations

from typing import Callable, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DegenerateDirectionError, DimensionError, GraphError

__all__ = [
    "Tensor",
    "as_tensor",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "tanh",
    "sqrt",
    "absolute",
    "clamp",
    "reshape",
    "concat",
    "conv2d",
    "reduce",
    "mean",
    "sum_",
    "sum_abs",
    "variance",
    "vector_ops",
    "dot",
    "l2_norm",
    "cosine_similarity",
    "sign",
    "clip",
    "grad",
    "finite_diff_grad",
    "NORM_EPSILON",
]

NORM_EPSILON = 1e-12

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    """Immutable dense tensor that remembers how it was computed."""

    __slots__ = ("data", "_parents", "_backward", "op")

    def __init__(self, data, _parents=(), _backward=None, op="leaf"):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        """Writable copy of the underlying data."""
        return np.array(self.data)

    def item(self):
        if self.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

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


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unscalar(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    return np.full(shape, g.sum())


def _check_binary(a: Tensor, b: Tensor, name: str):
    if a.shape == b.shape:
        return a.shape
    if b.size == 1:
        return a.shape
    if a.size == 1:
        return b.shape
    raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} are incompatible")


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _check_binary(a, b, "add")
    return Tensor(
        _bcast(a, shape) + _bcast(b, shape),
        (a, b),
        lambda g: (_unscalar(g, a.shape), _unscalar(g, b.shape)),
        "add",
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _check_binary(a, b, "sub")
    out = _bcast(a, shape) - _bcast(b, shape)
    return Tensor(
        out,
        (a, b),
        lambda g: (_unscalar(g, a.shape), _unscalar(-g, b.shape)),
        "sub",
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _check_binary(a, b, "mul")
    av, bv = _bcast(a, shape), _bcast(b, shape)
    return Tensor(
        av * bv,
        (a, b),
        lambda g: (_unscalar(g * bv, a.shape), _unscalar(g * av, b.shape)),
        "mul",
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    shape = _check_binary(a, b, "div")
    av, bv = _bcast(a, shape), _bcast(b, shape)
    out = av / bv
    return Tensor(
        out,
        (a, b),
        lambda g: (_unscalar(g / bv, a.shape), _unscalar(-g * out / bv, b.shape)),
        "div",
    )


def _bcast(t: Tensor, shape) -> np.ndarray:
    if t.shape == shape:
        return t.data
    return np.broadcast_to(t.data.reshape(()), shape)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: ArrayLike, b: ArrayLike) -> Tensor:
    """Dispatch ``add``, ``sub`` or ``mul`` by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return Tensor(out, (a,), backward, "sqrt")


def absolute(a: ArrayLike) -> Tensor:
    # subgradient at 0 is 0
    a = as_tensor(a)
    return Tensor(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clamp(a: ArrayLike, lo: float, hi: float) -> Tensor:
    """Differentiable clamp; gradient is zero where the bound is active.

    Used for the final range squash inside generators.  Perturbation
    truncation uses :func:`clip`, which is not differentiable.
    """
    if lo > hi:
        raise ConfigError(f"clamp bounds reversed: {lo} > {hi}")
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def reshape(a: ArrayLike, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return Tensor(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of no tensors")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor(out, ts, backward, "concat")


# -- convolution -----------------------------------------------------------


def _pad_matrix(n: int, pad: int, mode: str) -> np.ndarray:
    """Matrix P with P @ v == padded v along one axis."""
    idx = np.arange(-pad, n + pad)
    if mode == "reflect":
        if pad >= n:
            raise DimensionError(f"reflect padding {pad} needs axis length > {pad}, got {n}")
        idx = np.abs(idx)
        idx = np.where(idx > n - 1, 2 * (n - 1) - idx, idx)
    elif mode != "zero":
        raise ConfigError(f"unknown padding mode {mode!r}")
    P = np.zeros((n + 2 * pad, n))
    valid = (idx >= 0) & (idx < n)
    P[np.nonzero(valid)[0], idx[valid]] = 1.0
    return P


def conv2d(x: ArrayLike, kernel: ArrayLike, bias: ArrayLike | None = None, padding: str = "reflect") -> Tensor:
    """Same-size 2-D cross-correlation.

    ``x`` is ``HxW`` with a ``kxk`` kernel, or ``CxHxW`` with an
    ``OxCxkxk`` kernel (output ``OxHxW``).  ``bias`` has one entry per
    output channel.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    flat = x.ndim == 2
    if flat:
        if kernel.ndim != 2:
            raise DimensionError("HxW input needs a 2-D kernel")
        xv = x.data[None]
        kv = kernel.data[None, None]
    elif x.ndim == 3:
        if kernel.ndim != 4 or kernel.shape[1] != x.shape[0]:
            raise DimensionError(f"kernel {kernel.shape} does not match input channels {x.shape}")
        xv, kv = x.data, kernel.data
    else:
        raise DimensionError(f"conv2d input must be 2-D or 3-D, got shape {x.shape}")
    kh, kw = kv.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"kernel spatial dims must be odd, got {kh}x{kw}")
    C, H, W = xv.shape
    if H < kh or W < kw:
        raise DimensionError(f"input {H}x{W} smaller than kernel {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    Ph, Pw = _pad_matrix(H, ph, padding), _pad_matrix(W, pw, padding)
    xp = Ph @ xv @ Pw.T
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    out = np.tensordot(windows, kv, axes=([0, 3, 4], [1, 2, 3])).transpose(2, 0, 1)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (kv.shape[0],):
            raise DimensionError(f"bias shape {bias.shape} != ({kv.shape[0]},)")
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def backward(g):
        g3 = g[None] if flat else g
        dk = np.tensordot(g3, windows, axes=([1, 2], [1, 2]))
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + H, j : j + W] += np.tensordot(kv[:, :, i, j], g3, axes=([0], [0]))
        dx = Ph.T @ dxp @ Pw
        grads = [dx[0] if flat else dx, dk[0, 0] if flat else dk]
        if bias is not None:
            grads.append(g3.sum(axis=(1, 2)))
        return tuple(grads)

    return Tensor(out[0] if flat else out, parents, backward, "conv2d")


# -- reductions ------------------------------------------------------------


def _nonempty(t: Tensor, name: str):
    if t.size == 0:
        raise DimensionError(f"{name} of an empty tensor")


def sum_(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    _nonempty(a, "sum")
    return Tensor(a.data.sum(), (a,), lambda g: (np.full(a.shape, float(g)),), "sum")


def mean(a: ArrayLike, axis=None) -> Tensor:
    """Mean over all elements, or over ``axis`` (int or tuple)."""
    a = as_tensor(a)
    _nonempty(a, "mean")
    if axis is None:
        n = a.size
        return Tensor(a.data.mean(), (a,), lambda g: (np.full(a.shape, float(g) / n),), "mean")
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % a.ndim for ax in axes)
    n = int(np.prod([a.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axes)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), a.shape) / n,)

    return Tensor(out, (a,), backward, "mean")


def sum_abs(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    _nonempty(a, "sum_abs")
    return Tensor(np.abs(a.data).sum(), (a,), lambda g: (float(g) * np.sign(a.data),), "sum_abs")


def variance(a: ArrayLike) -> Tensor:
    """Population variance (divides by the element count)."""
    a = as_tensor(a)
    _nonempty(a, "variance")
    centered = a.data - a.data.mean()
    n = a.size
    return Tensor(
        np.mean(centered * centered),
        (a,),
        lambda g: (float(g) * 2.0 * centered / n,),
        "variance",
    )


_REDUCE = {"mean": mean, "sum": sum_, "sum_abs": sum_abs, "variance": variance}


def reduce(op: str, t: ArrayLike) -> Tensor:
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ConfigError(f"unknown reduction {op!r}") from None
    return fn(t)


# -- vector ops ------------------------------------------------------------


def _flat_pair(a: Tensor, b: Tensor, name: str):
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"{name} needs flat vectors of equal length, got {a.shape} and {b.shape}")


def dot(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _flat_pair(a, b, "dot")
    return Tensor(
        a.data @ b.data,
        (a, b),
        lambda g: (float(g) * b.data, float(g) * a.data),
        "dot",
    )


def l2_norm(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 1:
        raise DimensionError(f"l2_norm needs a flat vector, got shape {a.shape}")
    n = float(np.sqrt(a.data @ a.data))

    def backward(g):
        if n == 0.0:
            return (np.zeros(a.shape),)
        return (float(g) * a.data / n,)

    return Tensor(n, (a,), backward, "l2_norm")


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _flat_pair(a, b, "cosine_similarity")
    na = float(np.sqrt(a.data @ a.data))
    nb = float(np.sqrt(b.data @ b.data))
    if na <= NORM_EPSILON or nb <= NORM_EPSILON:
        raise DegenerateDirectionError(f"cosine of a zero-norm vector (norms {na:.3g}, {nb:.3g})")
    c = float(a.data @ b.data) / (na * nb)

    def backward(g):
        g = float(g)
        da = b.data / (na * nb) - c * a.data / (na * na)
        db = a.data / (na * nb) - c * b.data / (nb * nb)
        return (g * da, g * db)

    return Tensor(min(1.0, max(-1.0, c)), (a, b), backward, "cosine")


_VECTOR = {"dot": dot, "cosine_similarity": cosine_similarity}


def vector_ops(op: str, a: ArrayLike, b: ArrayLike | None = None) -> Tensor:
    if op == "l2_norm":
        return l2_norm(a)
    try:
        fn = _VECTOR[op]
    except KeyError:
        raise ConfigError(f"unknown vector op {op!r}") from None
    if b is None:
        raise DimensionError(f"{op} needs two operands")
    return fn(a, b)


# -- non-differentiable helpers --------------------------------------------


def sign(t: ArrayLike) -> Tensor:
    """Elementwise sign with sign(0) == 0.  Returns a detached leaf."""
    return Tensor(np.sign(as_tensor(t).data))


def clip(t: ArrayLike, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``.  Returns a detached leaf."""
    if lo > hi:
        raise ConfigError(f"clip bounds reversed: {lo} > {hi}")
    return Tensor(np.clip(as_tensor(t).data, lo, hi))


# -- differentiation -------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt):
    """Reverse-mode gradient of scalar ``output`` w.r.t. ``wrt``.

    ``wrt`` may be a single tensor or a sequence; the result mirrors it.
    Raises :class:`GraphError` when a target is not part of ``output``'s
    graph.
    """
    if output.size != 1:
        raise DimensionError(f"grad needs a scalar output, got shape {output.shape}")
    single = isinstance(wrt, Tensor)
    targets = [wrt] if single else list(wrt)
    order = _toposort(output)
    reachable = {id(n) for n in order}
    for t in targets:
        if id(t) not in reachable:
            raise GraphError("differentiation target is not reachable from the output")

    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.is_leaf:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
    result = [Tensor(grads.get(id(t), np.zeros(t.shape))) for t in targets]
    return result[0] if single else result


def finite_diff_grad(f: Callable[[Tensor], object], x: ArrayLike, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar-valued ``f`` at ``x``."""
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    base = as_tensor(x).numpy()
    flat = base.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(Tensor(base)))
        flat[i] = orig - h
        fm = _scalar(f(Tensor(base)))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return Tensor(out.reshape(base.shape))


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)
