"""Reverse-mode differentiation over numpy arrays.

Ops executed while a :class:`Tape` is active, with at least one input that
requires gradients, append a record to that tape. Records are appended in
execution order, so walking them backwards is a valid reverse topological
order.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError

_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("lgmcl_tape", default=None)
_CHECK_FINITE = [True]


class StaleTapeError(RuntimeError):
    pass


def set_finite_check(enabled: bool) -> None:
    _CHECK_FINITE[0] = bool(enabled)


class Tape:
    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False
        self._token: contextvars.Token | None = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    return _ACTIVE.get()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __pow__(self, p: float): return power(self, p)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    def swapaxes(self, a: int, b: int): return swapaxes(self, a, b)

    @property
    def T(self): return transpose(self, None)


class Parameter(Tensor):
    """A leaf tensor that optimizers and checkpoints pick up."""

    __slots__ = ()

    def __init__(self, data) -> None:
        super().__init__(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable, name: str) -> Tensor:
    if _CHECK_FINITE[0] and not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced by op '{name}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = name
    tape = _ACTIVE.get()
    record = tape is not None and not tape.consumed and any(p.requires_grad for p in parents)
    out.requires_grad = record
    out.tape = tape if record else None
    if record:
        tape.records.append((out, parents, fn))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise RuntimeError("loss was not recorded on an active tape (no parameters involved?)")
    if tape.consumed:
        raise StaleTapeError("tape already consumed by backward; run a fresh forward pass first")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, parents, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if p.tape is tape:
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg
            elif p.tape is None:
                p.grad = np.array(pg, dtype=np.float64) if p.grad is None else p.grad + pg
    # records -> outputs -> tape is a reference cycle; break it so the
    # saved activations are freed right away
    tape.records.clear()


# -- helpers -----------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def fn(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _result(ad * bd, (a, b), fn, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def fn(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), fn, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),), "power")


# -- linear algebra and shape ops ---------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), fn, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _result(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def getitem(a, idx) -> Tensor:
    """Basic or fancy indexing; the backward scatters with accumulation."""
    a = as_tensor(a)
    shape = a.shape

    def fn(g):
        z = np.zeros(shape)
        np.add.at(z, idx, g)
        return (z,)

    return _result(np.array(a.data[idx]), (a,), fn, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}") from None
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(out, ts, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}") from None
    n = len(ts)
    return _result(out, ts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), fn, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def embedding_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n, d = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range for table of {n} rows")

    def fn(g):
        z = np.zeros((n, d))
        np.add.at(z, ids.reshape(-1), g.reshape(-1, d))
        return (z,)

    return _result(table.data[ids], (table,), fn, "embedding_lookup")


def gather_last(a, index) -> Tensor:
    """``out[..., i, j] = a[..., i, index[i, j]]`` for ``a`` of shape (..., n, K)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    *lead, n, k = a.shape
    if index.ndim != 2 or index.shape[0] != n:
        raise ShapeError(f"gather_last: index shape {index.shape} does not match {a.shape}")
    m = index.shape[1]
    idx = np.broadcast_to(index, tuple(lead) + (n, m))
    out = np.take_along_axis(a.data, idx, axis=-1)
    rows = int(np.prod(lead, dtype=np.int64)) * n
    flat = (np.arange(rows, dtype=np.int64) * k).reshape(-1, 1) + np.broadcast_to(index, (rows // n, n, m)).reshape(rows, m)
    shape = a.shape

    def fn(g):
        z = np.bincount(flat.ravel(), weights=g.ravel(), minlength=rows * k)
        return (z.reshape(shape),)

    return _result(out, (a,), fn, "gather_last")


def segment_sum(values, segments, n_groups: int) -> Tensor:
    values = as_tensor(values)
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != (values.shape[0],):
        raise ShapeError(f"segment_sum: {seg.shape[0]} ids for {values.shape[0]} rows")
    if seg.size and (seg.min() < 0 or seg.max() >= n_groups):
        raise IndexError(f"segment id out of range [0, {n_groups})")
    out = np.zeros((n_groups,) + values.shape[1:])
    np.add.at(out, seg, values.data)
    return _result(out, (values,), lambda g: (g[seg],), "segment_sum")


# -- nonlinearities ------------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def leaky_relu(a, alpha: float = 0.01) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    slope = np.where(pos, 1.0, alpha)
    return _result(a.data * slope, (a,), lambda g: (g * slope,), "leaky_relu")


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.data
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    slope = np.where(x > 0, 1.0, neg_part + alpha)
    return _result(out, (a,), lambda g: (g * slope,), "elu")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def fn(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, g.shape[-1])
        ggamma = (flat_g * xhat.reshape(flat_g.shape)).sum(axis=0) if gamma.requires_grad else None
        gbeta = flat_g.sum(axis=0) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return _result(xhat * gd + beta.data, (x, gamma, beta), fn, "layer_norm")


def dropout(x, p: float, rng: np.random.Generator | int | None = None, training: bool = True) -> Tensor:
    x = as_tensor(x)
    if p <= 0.0 or not training:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    keep = (gen.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def _masked_softmax(x: np.ndarray, mask: np.ndarray | None, axis: int) -> np.ndarray:
    z = x if mask is None else np.where(mask, x, -np.inf)
    m = z.max(axis=axis, keepdims=True)
    if mask is not None:
        m[~np.isfinite(m)] = 0.0
    e = np.exp(z - m)
    s = e.sum(axis=axis, keepdims=True)
    if mask is not None:
        s[s == 0] = 1.0
    return e / s


def softmax(x, mask=None, axis: int = -1) -> Tensor:
    """Masked softmax; masked entries get 0 and a fully masked row is all zeros."""
    x = as_tensor(x)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            mask = np.broadcast_to(mask, x.shape)
        except ValueError:
            raise ShapeError(f"softmax: mask shape {mask.shape} vs input {x.shape}") from None
    y = _masked_softmax(x.data, mask, axis)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def softmax_rows(x, mask=None) -> Tensor:
    return softmax(x, mask, axis=-1)


def logsumexp(x, mask=None, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("logsumexp: a slice is fully masked")
    xd = x.data
    m = (np.where(mask, xd, -np.inf) if mask is not None else xd).max(axis=axis, keepdims=True)
    e = np.exp(xd - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    w = e / s
    return _result(out, (x,), lambda g: (np.expand_dims(g, axis) * w,), "logsumexp")


def bce_with_logits(logits, targets) -> Tensor:
    """Element-wise binary cross-entropy on raw logits; ``targets`` is a constant array."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: targets {y.shape} vs logits {logits.shape}")
    x = logits.data
    out = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    p = _sigmoid(x)
    return _result(out, (logits,), lambda g: (g * (p - y),), "bce_with_logits")


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    floored = norm <= eps
    n = np.where(floored, eps, norm)
    y = x.data / n

    def fn(g):
        proj = np.where(floored, 0.0, (g * y).sum(axis=axis, keepdims=True))
        return ((g - y * proj) / n,)

    return _result(y, (x,), fn, "l2_normalize")


def cosine_similarity(a, b, axis: int = -1, eps: float = 1e-12) -> Tensor:
    return tsum(l2_normalize(a, axis, eps) * l2_normalize(b, axis, eps), axis=axis)
