"""Parameter containers and the small layers shared by every model."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ShapeError
from . import tensor as T
from .rng import glorot_uniform
from .tensor import Parameter, Tensor


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching arrays in; returns the names that were loaded."""
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, arr in state.items():
            if name in own and own[name].shape != np.shape(arr):
                raise ShapeError(f"parameter {name}: stored shape {np.shape(arr)} vs model {own[name].shape}")
        loaded = []
        for name, arr in state.items():
            if name in own:
                own[name].data = np.array(arr, dtype=np.float64)
                loaded.append(name)
        return loaded

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _walk(value, name: str) -> Iterator[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}")


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True) -> None:
        self.weight = Parameter(glorot_uniform(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5) -> None:
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator) -> None:
        self.table = Parameter(glorot_uniform(rng, n, d))

    def __call__(self, ids) -> Tensor:
        return T.embedding_lookup(self.table, ids)


class MLP(Module):
    """Linear, ELU, Linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator) -> None:
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x) -> Tensor:
        return self.fc2(T.elu(self.fc1(x)))


class GRUCell(Module):
    def __init__(self, d_in: int, d: int, rng: np.random.Generator) -> None:
        self.w_z = Parameter(glorot_uniform(rng, d_in + d, d))
        self.w_r = Parameter(glorot_uniform(rng, d_in + d, d))
        self.w_h = Parameter(glorot_uniform(rng, d_in + d, d))
        self.b_z = Parameter(np.zeros(d))
        self.b_r = Parameter(np.zeros(d))
        self.b_h = Parameter(np.zeros(d))

    def __call__(self, context, state) -> Tensor:
        return gru_cell(context, state, self)


def gru_cell(context, state, params) -> Tensor:
    """h' = (1 - z) * h + z * h_cand with the reset gate applied to h inside the candidate."""
    c, h = T.as_tensor(context), T.as_tensor(state)
    if c.shape[:-1] != h.shape[:-1] or params.w_z.shape[0] != c.shape[-1] + h.shape[-1]:
        raise ShapeError(f"gru_cell: context {c.shape}, state {h.shape}, weights {params.w_z.shape}")
    ch = T.concat([c, h], axis=-1)
    z = T.sigmoid(ch @ params.w_z + params.b_z)
    r = T.sigmoid(ch @ params.w_r + params.b_r)
    cand = T.tanh(T.concat([c, r * h], axis=-1) @ params.w_h + params.b_h)
    return (1.0 - z) * h + z * cand
