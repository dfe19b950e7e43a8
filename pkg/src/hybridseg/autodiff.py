"""A small reverse-mode autodiff engine over numpy arrays.

Operations on :class:`Tensor` are recorded on the innermost active
:class:`Tape`; ``tape.backward(loss)`` walks the records in exact reverse
order.  Outside a tape nothing is recorded, which is how frozen networks are
evaluated.

    >>> x = Tensor(3.0, requires_grad=True)
    >>> with Tape() as tape:
    ...     y = x * x
    >>> tape.backward(y)
    >>> float(x.grad)
    6.0
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_TAPES: list["Tape"] = []


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    # make numpy defer to our reflected operators (ndarray - Tensor -> Tensor)
    __array_ufunc__ = None

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    # -- introspection -------------------------------------------------
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

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators -------------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Tape:
    """Ordered record of primitive ops and their backward closures."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        self.records.append((out, parents, backward))

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every tensor requiring it."""
        if grad is None:
            if loss.data.size != 1:
                raise ValueError("backward without an explicit grad needs a scalar loss")
            grad = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
        for out, parents, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # what is left are leaves (or tensors recorded on another tape)
        leaves = {id(p): p for _, ps, _ in self.records for p in ps}
        leaves[id(loss)] = loss
        for key, g in grads.items():
            t = leaves.get(key)
            if t is None:
                continue
            g = np.asarray(g, dtype=t.dtype)
            t.grad = g if t.grad is None else t.grad + g


def no_tape_active() -> bool:
    return not _TAPES


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor(data)
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPES[-1].record(out, tuple(parents), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), backward, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data**exponent
    if exponent == 0:
        return _make(out, (a,), lambda g: (np.zeros_like(a.data),), "pow")
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):  # reported by the finite check instead
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = (1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))).astype(x.dtype, copy=False)
    return _make(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),), "silu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


def layer_norm(a: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * weight.data + bias.data
    n = x.shape[-1]

    def backward(g):
        gw = (g * xhat).reshape(-1, n).sum(axis=0)
        gb = g.reshape(-1, n).sum(axis=0)
        gx_hat = g * weight.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, gw, gb

    return _make(out, (a, weight, bias), backward, "layer_norm")


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = np.tensordot(a.data, g, axes=(list(range(a.ndim - 1)), list(range(g.ndim))))
            return ga, gb
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            if a.ndim == 2 and ga.ndim > 2:
                ga = ga.reshape(-1, *a.shape).sum(axis=0)
            ga = _unbroadcast(ga, a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, pad_value: float = 0.0) -> Tensor:
    """Stride-1 'same' convolution on NHWC input with weight (k, k, Cin, Cout), k odd.

    The border is filled with ``pad_value`` (binarized layers pad with -1).
    """
    k = w.shape[0]
    if w.ndim != 4 or w.shape[1] != k or k % 2 == 0:
        raise ValueError(f"expected an odd square kernel, got {w.shape}")
    if x.ndim != 4 or x.shape[-1] != w.shape[2]:
        raise ValueError(f"input {x.shape} incompatible with kernel {w.shape}")
    p = k // 2
    n, h, wd, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)), constant_values=pad_value) if p else x.data
    out = np.zeros((n, h, wd, w.shape[3]), dtype=np.result_type(x.dtype, w.dtype))
    for dy in range(k):
        for dx in range(k):
            out += xp[:, dy : dy + h, dx : dx + wd, :] @ w.data[dy, dx]
    if b is not None:
        out += b.data

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for dy in range(k):
                for dx in range(k):
                    gxp[:, dy : dy + h, dx : dx + wd, :] += g @ w.data[dy, dx].T
            gx = gxp[:, p : p + h, p : p + wd, :] if p else gxp
        if w.requires_grad:
            # one (N, H*W, k*C) view per kernel row keeps the products batched
            cin = xp.shape[-1]
            xc = np.concatenate([xp[:, :, dx : dx + wd, :] for dx in range(k)], axis=-1)
            xc = xc.reshape(n, (h + 2 * p) * wd, k * cin)
            g3 = g.reshape(n, h * wd, -1)
            gw = np.empty((k, k * cin, g.shape[-1]), dtype=w.dtype)
            for dy in range(k):
                rows = xc[:, dy * wd : dy * wd + h * wd]
                gw[dy] = np.matmul(rows.transpose(0, 2, 1), g3).sum(axis=0)
            gw = gw.reshape(w.shape)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward, "conv2d")


# -- shape manipulation -----------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, splits, axis=axis)

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def getitem(a: Tensor, index) -> Tensor:
    idx = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(i, (list, np.ndarray)) for i in idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(a.data[index], (a,), backward, "getitem")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), backward, "mean")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling on NHWC."""
    n, h, w, c = x.shape
    return mean(reshape(x, (n, h // 2, 2, w // 2, 2, c)), axis=(2, 4))


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling on NHWC."""
    n, h, w, c = x.shape
    ones = np.ones((1, 1, 2, 1, 2, 1), dtype=x.dtype)
    return reshape(mul(reshape(x, (n, h, 1, w, 1, c)), ones), (n, 2 * h, 2 * w, c))


def sign_ste(x: Tensor, threshold=0.0, window: float = 1.0) -> Tensor:
    """+1 where x > threshold else -1; straight-through gradient inside the clip window.

    ``threshold`` may be a Tensor (learnable), receiving the negated gradient.
    """
    th = as_tensor(threshold, x)
    d = x.data - th.data
    out = np.where(d > 0, 1.0, -1.0).astype(x.dtype)
    inside = np.abs(d) <= window

    def backward(g):
        gx = g * inside
        return gx, _unbroadcast(-gx, th.shape)

    return _make(out, (x, th), backward, "sign_ste")


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data)
