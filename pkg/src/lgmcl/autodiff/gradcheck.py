"""Central finite-difference checks for the op set and for whole models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .nn import GRUCell, gru_cell
from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


# Gradients whose norm is below SCALE_FLOOR * max(1, |loss|) are compared
# absolutely. Central differences at h=1e-5 carry about 1e-11 * |loss| of
# rounding noise per entry, so a structurally zero gradient (a bias that
# shifts every softmax logit of a row equally) would otherwise read as a
# relative error near 1.
SCALE_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SCALE_FLOOR) -> float:
    """||a - n|| / max(||a||, ||n||, floor), per tensor."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def numerical_gradient(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest per-input relative error between tape and finite-difference gradients."""
    for t in inputs:
        t.grad = None
    with Tape():
        loss = f()
        backward(loss)
    floor = SCALE_FLOOR * max(1.0, abs(loss.item()))
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numerical_gradient(f, t, h), floor))
    return worst


def check_module(f: Callable[[], Tensor], module, h: float = 1e-5) -> float:
    return check_gradients(f, module.parameters(), h)


# -- op suite ----------------------------------------------------------------

def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 0.05, np.sign(x + 1e-300) * 0.05 + x, x)


def _shape(rng: np.random.Generator, ndim: int = 2) -> tuple[int, ...]:
    return tuple(int(s) for s in rng.integers(1, 5, size=ndim))


def _param(x) -> Tensor:
    return Tensor(x, requires_grad=True)


def _weighted(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    w = rng.normal(size=out.shape)
    return lambda y: T.tsum(y * w)


def _case(build: Callable[[], Tensor], inputs: list[Tensor], rng: np.random.Generator):
    weight = _weighted(build(), rng)
    return (lambda: weight(build())), inputs


def _unary(op):
    def make(rng):
        x = _param(_away_from_zero(rng, _shape(rng, 3)))
        return _case(lambda: op(x), [x], rng)
    return make


def _binary(op, positive_b: bool = False):
    def make(rng):
        s = _shape(rng, 3)
        sb = tuple(1 if rng.random() < 0.3 else v for v in s)[int(rng.integers(0, 2)):]
        a = _param(rng.normal(size=s))
        braw = rng.normal(size=sb)
        b = _param(np.abs(braw) + 0.5 if positive_b else braw)
        return _case(lambda: op(a, b), [a, b], rng)
    return make


def _matmul(rng):
    n, k, m = _shape(rng, 3)
    batch = int(rng.integers(1, 4))
    a = _param(rng.normal(size=(batch, n, k)))
    b = _param(rng.normal(size=(k, m)) if rng.random() < 0.5 else rng.normal(size=(batch, k, m)))
    return _case(lambda: a @ b, [a, b], rng)


def _concat(rng):
    s = _shape(rng, 2)
    axis = int(rng.integers(0, 2))
    s2 = list(s)
    s2[axis] = int(rng.integers(1, 4))
    a, b = _param(rng.normal(size=s)), _param(rng.normal(size=s2))
    return _case(lambda: T.concat([a, b], axis=axis), [a, b], rng)


def _stack(rng):
    s = _shape(rng, 2)
    a, b = _param(rng.normal(size=s)), _param(rng.normal(size=s))
    axis = int(rng.integers(0, 3))
    return _case(lambda: T.stack([a, b], axis=axis), [a, b], rng)


def _slice(rng):
    x = _param(rng.normal(size=(5, 4)))
    idx = (slice(1, 4), np.array([0, 2, 2]))
    return _case(lambda: x[idx], [x], rng)


def _transpose(rng):
    x = _param(rng.normal(size=_shape(rng, 3)))
    axes = tuple(int(a) for a in rng.permutation(3))
    return _case(lambda: T.transpose(x, axes), [x], rng)


def _reshape(rng):
    x = _param(rng.normal(size=(2, 3, 4)))
    return _case(lambda: T.reshape(x, (4, 6)), [x], rng)


def _sum(rng):
    x = _param(rng.normal(size=_shape(rng, 3)))
    axis = [None, 0, 1, 2, (0, 2)][int(rng.integers(0, 5))]
    keep = bool(rng.integers(0, 2))
    return _case(lambda: T.tsum(x, axis=axis, keepdims=keep), [x], rng)


def _mean(rng):
    x = _param(rng.normal(size=_shape(rng, 3)))
    return _case(lambda: T.mean(x, axis=-1), [x], rng)


def _embedding(rng):
    table = _param(rng.normal(size=(6, 3)))
    ids = rng.integers(0, 6, size=(2, 5))
    return _case(lambda: T.embedding_lookup(table, ids), [table], rng)


def _layer_norm(rng):
    s = _shape(rng, 2) + (int(rng.integers(2, 6)),)
    x = _param(rng.normal(size=s))
    g = _param(rng.normal(size=s[-1:]))
    b = _param(rng.normal(size=s[-1:]))
    return _case(lambda: T.layer_norm(x, g, b), [x, g, b], rng)


def _dropout(rng):
    x = _param(rng.normal(size=_shape(rng, 2)))
    seed = int(rng.integers(0, 2**31))
    return _case(lambda: T.dropout(x, 0.3, seed), [x], rng)


def _softmax(rng):
    s = _shape(rng, 2) + (int(rng.integers(2, 6)),)
    x = _param(rng.normal(size=s))
    mask = rng.random(s) < 0.7
    mask[..., 0] = True
    return _case(lambda: T.softmax(x, mask), [x], rng)


def _logsumexp(rng):
    s = _shape(rng, 2) + (int(rng.integers(2, 6)),)
    x = _param(rng.normal(size=s))
    mask = rng.random(s) < 0.7
    mask[..., -1] = True
    return _case(lambda: T.logsumexp(x, mask), [x], rng)


def _bce(rng):
    s = _shape(rng, 2)
    x = _param(rng.normal(size=s) * 2)
    y = (rng.random(s) < 0.5).astype(float)
    return _case(lambda: T.bce_with_logits(x, y), [x], rng)


def _cosine(rng):
    s = _shape(rng, 1) + (int(rng.integers(2, 6)),)
    a, b = _param(rng.normal(size=s)), _param(rng.normal(size=s))
    return _case(lambda: T.cosine_similarity(a, b), [a, b], rng)


def _gather(rng):
    n, k = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    x = _param(rng.normal(size=(2, n, k)))
    idx = rng.integers(0, k, size=(n, int(rng.integers(1, 5))))
    return _case(lambda: T.gather_last(x, idx), [x], rng)


def _segment(rng):
    n = int(rng.integers(1, 7))
    x = _param(rng.normal(size=(n, 3)))
    seg = rng.integers(0, 3, size=n)
    return _case(lambda: T.segment_sum(x, seg, 3), [x], rng)


def _gru(rng):
    d_in, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    cell = GRUCell(d_in, d, rng)
    for p in cell.parameters():
        p.data += rng.normal(scale=0.3, size=p.shape)
    c = _param(rng.normal(size=(2, d_in)))
    h = _param(rng.normal(size=(2, d)))
    return _case(lambda: gru_cell(c, h, cell), [c, h] + cell.parameters(), rng)


OP_SUITE: dict[str, Callable] = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _binary(T.div, positive_b=True),
    "neg": _unary(T.neg),
    "power": _unary(lambda x: T.power(x, 3.0)),
    "matmul": _matmul,
    "concat": _concat,
    "stack": _stack,
    "slice": _slice,
    "transpose": _transpose,
    "reshape": _reshape,
    "sum": _sum,
    "mean": _mean,
    "embedding_lookup": _embedding,
    "exp": _unary(T.exp),
    "log": _unary(lambda x: T.log(T.power(x, 2.0) + 0.1)),
    "sqrt": _unary(lambda x: T.sqrt(T.power(x, 2.0) + 0.1)),
    "tanh": _unary(T.tanh),
    "sigmoid": _unary(T.sigmoid),
    "leaky_relu": _unary(T.leaky_relu),
    "elu": _unary(T.elu),
    "layer_norm": _layer_norm,
    "dropout": _dropout,
    "softmax": _softmax,
    "logsumexp": _logsumexp,
    "bce_with_logits": _bce,
    "cosine_similarity": _cosine,
    "gather_last": _gather,
    "segment_sum": _segment,
    "gru_cell": _gru,
}


def run_op_suite(trials: int = 10, seed: int = 0, tol: float = 1e-4, h: float = 1e-5) -> list[GradCheckResult]:
    results = []
    for name, make in OP_SUITE.items():
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        worst = 0.0
        for _ in range(trials):
            f, inputs = make(rng)
            worst = max(worst, check_gradients(f, inputs, h))
        results.append(GradCheckResult(name, worst, tol))
    return results
