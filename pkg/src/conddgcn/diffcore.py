"""Dense tensors with a recording tape for reverse-mode gradients.

Only the primitives the graph layers need are provided. Operations are
recorded on the innermost active :class:`Tape`; outside a tape nothing is
recorded and evaluation is plain numpy.

    >>> x = tensor([3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = sum(x * x)
    >>> tape.backward(y)[x]
    array([6.])
"""

from __future__ import annotations

import builtins
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "DiffError", "tensor", "backward", "finite_diff_check",
    "finite_diff_check_tensors", "add", "sub", "mul", "neg", "power",
    "matmul", "affine", "conv1d", "concat", "relu", "sigmoid", "mean", "sum",
    "mix_last", "linear_along", "interp_time", "dropout", "abs", "l1_norm",
    "l2_norm", "reshape", "transpose",
]


class DiffError(ValueError):
    """Raised on shape mismatches and invalid gradient requests."""


_TAPES: list["Tape"] = []


class Tensor:
    """An ndarray plus an optional gradient slot.

    Identity-hashed so tensors can key gradient maps; comparison operators
    are intentionally not overloaded.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # plain scalars/arrays adopt the tensor operand's dtype
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.dtype), b
    return _as_tensor(a), _as_tensor(b)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of the operations evaluated while the tape is active.

    Records are appended as operations execute, so the list is already in
    topological order.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: Sequence[Tensor], fn) -> None:
        self.records.append(_Record(out, tuple(inputs), fn))
        self._produced.add(id(out))

    def leaves(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for rec in self.records:
            for t in rec.inputs:
                if t.requires_grad and id(t) not in self._produced:
                    seen.setdefault(id(t), t)
        return list(seen.values())

    def backward(self, loss: Tensor, leaves: Iterable[Tensor] | None = None,
                 accumulate: bool = True) -> dict[Tensor, np.ndarray]:
        """Return d(loss)/d(leaf) for every requires_grad leaf on the tape.

        Leaves that do not reach ``loss`` get zeros. With ``accumulate`` the
        result is also summed into each leaf's ``.grad``.
        """
        if loss.data.size != 1:
            raise DiffError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        targets = list(leaves) if leaves is not None else self.leaves()
        result: dict[Tensor, np.ndarray] = {}
        for leaf in targets:
            g = grads.get(id(leaf))
            g = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
            result[leaf] = g
            if accumulate:
                leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        return result


def backward(tape: Tape, loss: Tensor, leaves: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    return tape.backward(loss, leaves)


def _emit(data: np.ndarray, inputs: Sequence[Tensor], fn) -> Tensor:
    out = Tensor(data)
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1].record(out, inputs, fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DiffError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    return _emit(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = _as_tensor(a)
    return _emit(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# reductions ------------------------------------------------------------------

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def sum(a, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(np.asarray(out), (a,), bw)


def mean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _emit(np.asarray(out), (a,), bw)


def l1_norm(a, axes=None) -> Tensor:
    return sum(abs(a), axes)


def l2_norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    a = _as_tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis))

    def bw(g):
        nk = np.expand_dims(n, axis)
        safe = np.where(nk > 0, nk, 1.0)
        return (np.where(nk > 0, a.data / safe, 0.0) * np.expand_dims(g, axis),)

    return _emit(n, (a,), bw)


# shape -----------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DiffError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _emit(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)
    return _emit(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit(np.array(out), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DiffError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _emit(out, tensors, lambda g: tuple(np.split(g, sizes, axis=ax)))


# linear maps -----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product of two 2D tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DiffError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def _split_axis(shape, ax):
    pre = int(np.prod(shape[:ax], dtype=np.int64))
    post = int(np.prod(shape[ax + 1:], dtype=np.int64))
    return pre, shape[ax], post


def affine(x, weight, bias=None, axis: int = 1) -> Tensor:
    """Apply ``weight @ v + bias`` to every vector along ``axis`` of ``x``.

    ``weight`` has shape (out, in); the output keeps ``x``'s layout with
    ``axis`` resized to ``out``.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    ax = axis % x.ndim
    if weight.ndim != 2 or weight.shape[1] != x.shape[ax]:
        raise DiffError(f"affine: weight {weight.shape} does not fit input {x.shape} on axis {axis}")
    P, C, Q = _split_axis(x.shape, ax)
    O = weight.shape[0]
    x3 = x.data.reshape(P, C, Q)
    y3 = weight.data @ x3
    inputs = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (O,):
            raise DiffError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
        y3 += bias.data[:, None]
        inputs.append(bias)
    out_shape = x.shape[:ax] + (O,) + x.shape[ax + 1:]

    def bw(g):
        g3 = g.reshape(P, O, Q)
        gx = (weight.data.T @ g3).reshape(x.shape)
        gw = (g3 @ x3.transpose(0, 2, 1)).sum(axis=0)
        out = [gx, gw]
        if bias is not None:
            out.append(g3.sum(axis=(0, 2)))
        return tuple(out)

    return _emit(y3.reshape(out_shape), inputs, bw)


def mix_last(x, m) -> Tensor:
    """Right-multiply the last axis of ``x`` by ``m``.

    ``m`` is either a shared (J, K) matrix or a per-sample (B, J, K) stack
    matching ``x``'s leading batch axis. Plain ndarrays are treated as
    constants.
    """
    x, m = _as_tensor(x), _as_tensor(m)
    J = x.shape[-1]
    if m.ndim == 2:
        if m.shape[0] != J:
            raise DiffError(f"mix_last: matrix {m.shape} does not fit input {x.shape}")
        y = x.data @ m.data

        def bw(g):
            gx = g @ m.data.T
            gm = x.data.reshape(-1, J).T @ g.reshape(-1, m.shape[1])
            return gx, gm

        return _emit(y, (x, m), bw)
    if m.ndim != 3 or m.shape[0] != x.shape[0] or m.shape[1] != J:
        raise DiffError(f"mix_last: per-sample matrix {m.shape} does not fit input {x.shape}")
    B, K = x.shape[0], m.shape[2]
    xf = x.data.reshape(B, -1, J)
    y = (xf @ m.data).reshape(x.shape[:-1] + (K,))

    def bw_batched(g):
        gf = g.reshape(B, -1, K)
        gx = (gf @ m.data.transpose(0, 2, 1)).reshape(x.shape)
        gm = xf.transpose(0, 2, 1) @ gf
        return gx, gm

    return _emit(y, (x, m), bw_batched)


def linear_along(x, m: np.ndarray, axis: int) -> Tensor:
    """Apply a constant (out, in) matrix along ``axis``."""
    x = _as_tensor(x)
    m = np.asarray(m, dtype=x.dtype)
    ax = axis % x.ndim
    if m.ndim != 2 or m.shape[1] != x.shape[ax]:
        raise DiffError(f"linear_along: matrix {m.shape} does not fit input {x.shape} on axis {axis}")
    y = np.moveaxis(np.tensordot(x.data, m, axes=([ax], [1])), -1, ax)
    return _emit(np.ascontiguousarray(y), (x,),
                 lambda g: (np.moveaxis(np.tensordot(g, m, axes=([ax], [0])), -1, ax),))


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights with both end samples aligned."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    m[np.arange(n_out), lo] = 1.0 - frac
    m[np.arange(n_out), lo + 1] += frac
    return m


def interp_time(x, length: int, axis: int = 2) -> Tensor:
    x = _as_tensor(x)
    return linear_along(x, interp_matrix(x.shape[axis], length), axis)


def conv1d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Zero-padded ("same") 1D convolution along axis 2 of a (B, C, T, ...) tensor.

    ``weight`` is (out, in, k) with odd k; the output length is ceil(T / stride).
    Trailing axes after time are treated as independent positions.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim < 3:
        raise DiffError(f"conv1d: expected (B, C, T, ...) input, got {x.shape}")
    O, C, K = weight.shape
    if C != x.shape[1]:
        raise DiffError(f"conv1d: weight {weight.shape} does not fit input {x.shape}")
    if K % 2 == 0:
        raise DiffError(f"conv1d: kernel size must be odd, got {K}")
    if stride < 1:
        raise DiffError(f"conv1d: stride must be positive, got {stride}")
    xd = x.data
    B, T, rest = xd.shape[0], xd.shape[2], xd.shape[3:]
    pad = (K - 1) // 2
    t_out = (T - 1) // stride + 1
    widths = [(0, 0)] * xd.ndim
    widths[2] = (pad, pad)
    xp = np.pad(xd, widths)
    span = stride * (t_out - 1) + 1
    cols = np.stack([xp[:, :, k:k + span:stride] for k in range(K)], axis=2)  # (B,C,K,To,...)
    Q = cols[0, 0, 0].size
    cols3 = cols.reshape(B, C * K, Q)
    w2 = weight.data.reshape(O, C * K)
    y3 = w2 @ cols3
    inputs = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (O,):
            raise DiffError(f"conv1d: bias {bias.shape} does not match weight {weight.shape}")
        y3 += bias.data[:, None]
        inputs.append(bias)

    def bw(g):
        g3 = g.reshape(B, O, Q)
        gw = (g3 @ cols3.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gcols = (w2.T @ g3).reshape(cols.shape)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, :, k:k + span:stride] += gcols[:, :, k]
        out = [gxp[:, :, pad:pad + T], gw]
        if bias is not None:
            out.append(g3.sum(axis=(0, 2)))
        return tuple(out)

    return _emit(y3.reshape((B, O, t_out) + rest), inputs, bw)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    x = _as_tensor(x)
    if not training or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise DiffError(f"dropout: rate must lie in [0, 1), got {p}")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _emit(x.data * keep, (x,), lambda g: (g * keep,))


# gradient checking -----------------------------------------------------------

def _no_tape_eval(fn: Callable[[], Tensor]) -> float:
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        return float(np.asarray(fn().data).reshape(()))
    finally:
        _TAPES.extend(saved)


def finite_diff_check(fn: Callable[[Tensor], Tensor], point, epsilon: float = 1e-4,
                      coords: Iterable[int] | None = None) -> float:
    """Largest ``|analytic - central difference| / max(1, |analytic|)``.

    ``fn`` maps a tensor to a scalar tensor. ``coords`` restricts the check
    to a subset of flat indices.
    """
    point = point.data if isinstance(point, Tensor) else np.asarray(point, dtype=np.float64)
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    return finite_diff_check_tensors(lambda: fn(x), [x], epsilon,
                                     None if coords is None else [list(coords)])


def finite_diff_check_tensors(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                              epsilon: float = 1e-4,
                              coords: Sequence[Iterable[int] | None] | None = None) -> float:
    """Finite-difference check of a closure over several leaf tensors.

    Each tensor's ``data`` is perturbed in place and restored afterwards.
    """
    if not epsilon > 0:
        raise DiffError(f"finite_diff_check: epsilon must be positive, got {epsilon}")
    for t in tensors:
        t.data = np.ascontiguousarray(t.data)
    with Tape() as tape:
        out = fn()
    if out.data.size != 1:
        raise DiffError(f"finite_diff_check: function must be scalar, got shape {out.shape}")
    grads = tape.backward(out, leaves=tensors, accumulate=False)
    worst = 0.0
    for i, t in enumerate(tensors):
        analytic = grads[t].reshape(-1)
        flat = t.data.reshape(-1)
        if not np.all(np.isfinite(analytic)):
            raise DiffError("finite_diff_check: non-finite analytic gradient")
        idx = range(flat.size) if coords is None or coords[i] is None else coords[i]
        for j in idx:
            orig = flat[j]
            flat[j] = orig + epsilon
            fp = _no_tape_eval(fn)
            flat[j] = orig - epsilon
            fm = _no_tape_eval(fn)
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise DiffError("finite_diff_check: non-finite function value")
            numeric = (fp - fm) / (2.0 * epsilon)
            err = builtins.abs(analytic[j] - numeric) / max(1.0, builtins.abs(analytic[j]))
            worst = max(worst, float(err))
    return worst
