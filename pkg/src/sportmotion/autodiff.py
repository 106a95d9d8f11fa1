"""Small reverse-mode autodiff over numpy arrays.

Tensors wrap read-only float64 arrays. Operations executed while a
:class:`Tape` is active, and touching at least one tensor that requires a
gradient, are appended to that tape together with a vector-Jacobian product
closure. :meth:`Tape.backward` walks the nodes once in reverse order.

Broadcasting is limited to bias-add patterns: equal shapes, a scalar operand,
or one operand whose shape is a suffix of the other's.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "ShapeError",
    "GradientReport",
    "record",
    "backward",
    "check_gradient",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "sum",
    "mean",
    "relu",
    "softmax",
    "log",
    "square",
    "sqrt",
    "concat",
    "slice",
    "reshape",
    "transpose",
    "conv_temporal",
    "norm",
    "cross_entropy",
]

_builtin_sum = sum
_builtin_slice = slice


class ShapeError(ValueError):
    pass


class Tensor:
    """Immutable dense float64 array with an optional gradient flag."""

    __slots__ = ("data", "requires_grad", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        return t

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
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    __hash__ = object.__hash__

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return slice(self, index)


def _raise_item(t: Tensor) -> float:
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    kind: str
    inputs: tuple
    output: Tensor
    vjp: Callable


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Gradients:
    """Leaf gradients returned by :meth:`Tape.backward`.

    Indexing with a leaf that never reached the loss yields zeros.
    """

    def __init__(self, grads: dict, leaves: dict):
        self._grads = grads
        self._leaves = leaves

    def __getitem__(self, leaf: Tensor) -> np.ndarray:
        g = self._grads.get(id(leaf))
        if g is None or self._leaves.get(id(leaf)) is not leaf:
            return np.zeros(leaf.shape)
        return g

    def __contains__(self, leaf: Tensor) -> bool:
        return self._leaves.get(id(leaf)) is leaf

    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())


class Tape:
    """Ordered record of primitive operations.

    Single owner; use one tape per thread. Nodes are appended in execution
    order, so parents always precede children.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> Gradients:
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        produced = {id(n.output) for n in self.nodes}
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
        leaves: dict[int, Tensor] = {}
        leaf_grads: dict[int, np.ndarray] = {}
        if loss.requires_grad and id(loss) not in produced:
            leaves[id(loss)] = loss
            leaf_grads[id(loss)] = grads[id(loss)]
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                target = grads if key in produced else leaf_grads
                if key not in produced:
                    leaves[key] = inp
                prev = target.get(key)
                target[key] = gi if prev is None else prev + gi
        return Gradients(leaf_grads, leaves)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    return tape.backward(loss)


def record(kind: str, inputs: Sequence[Tensor], out: np.ndarray, vjp: Callable) -> Tensor:
    """Wrap ``out`` as a tensor and append a node to the active tape.

    ``vjp(g)`` must return one gradient (or None) per input, shaped like that
    input. New primitives, including deliberately wrong ones in tests, are
    registered through this function.
    """
    needs = any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, needs)
    tape = _active_tape()
    if needs and tape is not None:
        tape.nodes.append(_Node(kind, tuple(inputs), result, vjp))
    return result


# -- broadcasting helpers ---------------------------------------------------


def _check_bias_broadcast(kind: str, a: tuple, b: tuple) -> None:
    if a == b or a == () or b == ():
        return
    if len(a) >= len(b) and a[len(a) - len(b):] == b:
        return
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return
    raise ShapeError(f"{kind}: incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_bias_broadcast("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return record("add", (a, b), a.data + b.data, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_bias_broadcast("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return record("sub", (a, b), a.data - b.data, lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_bias_broadcast("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return record("mul", (a, b), ad * bd, vjp)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return record("log", (x,), out, lambda g: (g / xd,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("square", (x,), xd * xd, lambda g: (2.0 * g * xd,))


def sqrt(x) -> Tensor:
    """Square root; the gradient at exactly zero is taken as zero."""
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return record("sqrt", (x,), out, vjp)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return record("softmax", (x,), p, vjp)


# -- reductions -------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return record("sum", (x,), out, vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    count = int(np.prod([shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape),)

    return record("mean", (x,), out, vjp)


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supported layouts: ``(..., k) @ (k, n)`` and ``(m, k) @ (..., k, n)``; the
    2-D operand is shared across the other operand's leading dimensions.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim >= 1:
        if ad.shape[-1] != bd.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ for {ad.shape} and {bd.shape}")
        k, n = bd.shape
        a2 = ad.reshape(-1, k)  # one GEMM instead of a stack of small ones
        out = (a2 @ bd).reshape(ad.shape[:-1] + (n,))

        def vjp(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return record("matmul", (a, b), out, vjp)
    if ad.ndim == 2 and bd.ndim > 2:
        if ad.shape[1] != bd.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions differ for {ad.shape} and {bd.shape}")
        m, k = ad.shape
        n = bd.shape[-1]
        lead = bd.shape[:-2]
        b3 = bd.reshape(-1, k, n)
        out = np.matmul(ad, b3).reshape(lead + (m, n))

        def vjp(g):
            g3 = g.reshape(-1, m, n)
            ga = np.tensordot(g3, b3, axes=([0, 2], [0, 2])) if a.requires_grad else None
            gb = np.matmul(ad.T, g3).reshape(bd.shape) if b.requires_grad else None
            return ga, gb

        return record("matmul", (a, b), out, vjp)
    raise ShapeError(f"matmul: unsupported layout {ad.shape} @ {bd.shape}")


# -- layout -----------------------------------------------------------------


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    ax = axis % ts[0].ndim
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {ax}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts))
        )

    return record("concat", ts, out, vjp)


def _is_basic(index) -> bool:
    if not isinstance(index, tuple):
        index = (index,)
    return all(isinstance(i, (int, np.integer, _builtin_slice)) or i is Ellipsis or i is None for i in index)


def slice(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]
    if out.size == 0:
        raise ShapeError(f"slice {index!r} of shape {x.shape} is empty")
    shape = x.shape
    basic = _is_basic(index)

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return record("slice", (x,), np.array(out, dtype=np.float64), vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(src),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return record("transpose", (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inv),))


# -- convolution ------------------------------------------------------------


def conv_temporal(x, w, stride: int = 1) -> Tensor:
    """Same-padded convolution along axis 1.

    ``x`` is ``(N, T, ..., C_in)`` and ``w`` is ``(k, C_in, C_out)`` with odd
    ``k``. Axes between time and channels are treated as batch, so this covers
    both ``(N, T, C)`` sequences and ``(N, T, V, C)`` skeleton tensors (a
    ``k x 1`` 2-D convolution). Output length is ``ceil(T / stride)``.
    """
    x, w = as_tensor(x), as_tensor(w)
    xd, wd = x.data, w.data
    if wd.ndim != 3 or xd.ndim < 3 or xd.shape[-1] != wd.shape[1]:
        raise ShapeError(f"conv_temporal: shapes {xd.shape} and {wd.shape} do not match")
    k, c_in, c_out = wd.shape
    if k % 2 != 1:
        raise ShapeError(f"conv_temporal: kernel size must be odd, got {k}")
    T = xd.shape[1]
    pad = (k - 1) // 2
    t_out = (T - 1) // stride + 1
    span = stride * (t_out - 1) + 1
    mid = xd.shape[2:-1]
    # time-major rows (T + 2 pad, M, C_in): every tap is then a free view
    rows = np.zeros((T + 2 * pad, xd.shape[0] * int(np.prod(mid, dtype=int)), c_in))
    rows[pad:pad + T] = np.moveaxis(xd, 1, 0).reshape(T, -1, c_in)
    m = rows.shape[1]
    acc = np.zeros((t_out * m, c_out))
    for j in range(k):
        acc += rows[j:j + span:stride].reshape(-1, c_in) @ wd[j]
    out = np.ascontiguousarray(np.moveaxis(acc.reshape((t_out, xd.shape[0]) + mid + (c_out,)), 0, 1))

    def vjp(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, 1, 0)).reshape(-1, c_out)
        gw = gx = None
        if w.requires_grad:
            gw = np.stack([rows[j:j + span:stride].reshape(-1, c_in).T @ g2 for j in range(k)])
        if x.requires_grad:
            grows = np.zeros(rows.shape)
            for j in range(k):
                grows[j:j + span:stride] += (g2 @ wd[j].T).reshape(t_out, m, c_in)
            gx = np.ascontiguousarray(np.moveaxis(grows[pad:pad + T].reshape((T, xd.shape[0]) + mid + (c_in,)), 0, 1))
        return gx, gw

    return record("conv_temporal", (x, w), out, vjp)


# -- composites -------------------------------------------------------------


def norm(x) -> Tensor:
    """Euclidean norm of all entries, sqrt(sum(x**2))."""
    return sqrt(sum(square(x)))


def cross_entropy(probs, target_index: int) -> Tensor:
    """Negative log-likelihood of ``target_index`` under a probability vector."""
    probs = as_tensor(probs)
    return mul(log(slice(probs, (Ellipsis, target_index))), -1.0)


# -- gradient checking ------------------------------------------------------


@dataclass
class GradientReport:
    passed: bool
    max_rel_error: float
    rel_errors: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    coords: np.ndarray
    failures: list = field(default_factory=list)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        msg = f"gradient check {status}: max rel err {self.max_rel_error:.3e} over {len(self.coords)} coords"
        if self.failures:
            msg += f"; failing coords {self.failures[:10]}"
        return msg


def check_gradient(
    f: Callable[[Tensor], Tensor],
    x,
    step: float = 1e-6,
    tol: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-7,
) -> GradientReport:
    """Compare the reverse-mode gradient of scalar ``f`` with central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps coordinates where both gradients vanish from dividing by zero.
    ``max_coords`` samples a random subset of coordinates for large inputs.
    Failures are ``(flat_index, reason)`` pairs.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    failures: list = []
    with Tape() as tape:
        y = f(leaf)
    y = as_tensor(y)
    if y.size != 1:
        raise ShapeError(f"check_gradient needs a scalar function, got shape {y.shape}")
    empty = np.zeros(0)
    if not np.isfinite(y.data).all():
        failures.append((-1, "non-finite f(x)"))
        return GradientReport(False, float("inf"), empty, empty, empty, np.zeros(0, dtype=int), failures)
    analytic = tape.backward(y)[leaf].reshape(-1)

    n = x0.size
    coords = np.arange(n)
    if max_coords is not None and n > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = np.sort(rng.choice(n, size=max_coords, replace=False))

    flat = x0.reshape(-1)
    numeric = np.empty(len(coords))
    for out_i, i in enumerate(coords):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp = float(as_tensor(f(Tensor(xp.reshape(x0.shape)))).data.reshape(-1)[0])
        fm = float(as_tensor(f(Tensor(xm.reshape(x0.shape)))).data.reshape(-1)[0])
        if not (np.isfinite(fp) and np.isfinite(fm)):
            failures.append((int(i), "non-finite f at perturbation"))
            numeric[out_i] = np.nan
            continue
        numeric[out_i] = (fp - fm) / (2.0 * step)

    a = analytic[coords]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    rel = np.abs(a - numeric) / denom
    rel = np.where(np.isfinite(rel), rel, np.inf)
    for out_i in np.flatnonzero(rel >= tol):
        i = int(coords[out_i])
        if not any(fi == i for fi, _ in failures):
            failures.append((i, f"rel err {rel[out_i]:.3e}"))
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradientReport(not failures, max_rel, rel, a, numeric, coords, failures)
