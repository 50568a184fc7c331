"""AttentiveFP (local) and adjacency-gated Graph Transformer (global) encoders.

Molecules are batched as zero-padded dense arrays: node inputs (B, L, 72),
a validity mask (B, L) and a 0/1 adjacency (B, L, L).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..autodiff import ops as T
from ..autodiff.nn import MLP, GRUCell, LayerNorm, Linear, Module
from ..autodiff.rng import glorot_uniform
from ..autodiff.tensor import Parameter, Tensor
from ..errors import ConfigError, ShapeError
from ..featurizer import ATOM_DIM, BOND_DIM, FeaturizedGraph

INPUT_DIM = ATOM_DIM + BOND_DIM
GATES = ("soft_blend", "hard_mask")


@dataclass
class GraphEncoderConfig:
    hidden_dim: int = 128
    local_layers: int = 2
    global_layers: int = 2
    heads: int = 4
    adjacency_gate: str = "soft_blend"
    gate_init: float = 1.0

    def __post_init__(self) -> None:
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.local_layers < 1 or self.global_layers < 1:
            raise ConfigError("encoder layer counts must be at least 1")
        if self.adjacency_gate not in GATES:
            raise ConfigError(f"adjacency_gate must be one of {GATES}, got {self.adjacency_gate!r}")
        if self.gate_init < 0:
            raise ConfigError("gate_init must be non-negative")


@dataclass
class GraphBatch:
    x: np.ndarray
    mask: np.ndarray
    adj: np.ndarray

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_graphs(cls, graphs: Sequence[FeaturizedGraph], pad_to: int | None = None) -> "GraphBatch":
        if not graphs:
            raise ValueError("cannot batch zero graphs")
        length = max(g.n_atoms for g in graphs)
        if pad_to is not None:
            length = max(length, pad_to)
        b = len(graphs)
        x = np.zeros((b, length, INPUT_DIM))
        mask = np.zeros((b, length), dtype=bool)
        adj = np.zeros((b, length, length))
        for i, g in enumerate(graphs):
            n = g.n_atoms
            x[i, :n] = g.node_inputs()
            mask[i, :n] = True
            adj[i, :n, :n] = g.adjacency
        return cls(x, mask, adj)


@dataclass
class GraphEncoding:
    z_local: Tensor
    z_global: Tensor
    per_atom_local: Tensor
    per_atom_global: Tensor


def readout_sum(per_atom, mask: np.ndarray | None = None) -> Tensor:
    """Sum over the atom axis (second to last), skipping padded rows."""
    per_atom = T.as_tensor(per_atom)
    if per_atom.ndim < 2 or per_atom.shape[-2] == 0:
        raise ShapeError(f"readout over an empty atom set (shape {per_atom.shape})")
    if mask is not None:
        per_atom = per_atom * np.asarray(mask, dtype=np.float64)[..., None]
    return T.tsum(per_atom, axis=-2)


class GraphInputEmbedding(Module):
    def __init__(self, d: int, rng: np.random.Generator) -> None:
        self.proj = Linear(INPUT_DIM, d, rng)
        self.norm = LayerNorm(d)

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != INPUT_DIM:
            raise ShapeError(f"graph inputs have width {x.shape[-1]}, expected {INPUT_DIM}")
        return self.norm(self.proj(x))


class AttentiveFPLayer(Module):
    def __init__(self, d: int, rng: np.random.Generator) -> None:
        # W of the pair score acts on [h_v, h_u]; split into its two halves.
        w = glorot_uniform(rng, 2 * d, 1)
        self.att_self = Parameter(w[:d])
        self.att_nbr = Parameter(w[d:])
        self.att_bias = Parameter(np.zeros(1))
        self.value = Linear(d, d, rng, bias=False)
        self.gru = GRUCell(d, d, rng)
        self.last_attention: np.ndarray | None = None

    def __call__(self, h: Tensor, adj: np.ndarray) -> Tensor:
        s_self = h @ self.att_self
        s_nbr = h @ self.att_nbr
        scores = T.leaky_relu(s_self + T.swapaxes(s_nbr, -1, -2) + self.att_bias)
        alpha = T.softmax(scores, adj > 0)
        self.last_attention = alpha.data
        context = T.elu(alpha @ self.value(h))
        return self.gru(context, h)


class AttentiveFP(Module):
    def __init__(self, d: int, n_layers: int, rng: np.random.Generator) -> None:
        self.layers = [AttentiveFPLayer(d, rng) for _ in range(n_layers)]

    def __call__(self, m: Tensor, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        h = m
        for layer in self.layers:
            h = layer(h, batch.adj)
        per_atom = h * batch.mask[..., None].astype(np.float64)
        return per_atom, readout_sum(per_atom)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    return T.swapaxes(T.reshape(x, tuple(lead) + (n, heads, d // heads)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    x = T.swapaxes(x, -2, -3)
    *lead, n, h, dk = x.shape
    return T.reshape(x, tuple(lead) + (n, h * dk))


class GraphTransformerLayer(Module):
    def __init__(self, d: int, heads: int, gate: str, gate_init: float, rng: np.random.Generator) -> None:
        self.heads = heads
        self.gate = gate
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.norm1 = LayerNorm(d)
        self.ff = MLP(d, 2 * d, d, rng)
        self.norm2 = LayerNorm(d)
        # gamma = gate_raw ** 2 keeps the blend weight non-negative
        self.gate_raw = Parameter(np.array([np.sqrt(gate_init)])) if gate == "soft_blend" else None
        self.last_attention: np.ndarray | None = None

    @property
    def gamma(self) -> float:
        return float(self.gate_raw.data[0] ** 2) if self.gate_raw is not None else 0.0

    def attention(self, x: Tensor, mask: np.ndarray, adj: np.ndarray) -> Tensor:
        q, k, v = (_split_heads(f(x), self.heads) for f in (self.q, self.k, self.v))
        dk = q.shape[-1]
        scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dk))
        n = mask.shape[-1]
        a_plus = adj + np.eye(n) * mask[..., None]
        key_mask = mask[..., None, None, :]
        if self.gate == "hard_mask":
            probs = T.softmax(scores, (a_plus[..., None, :, :] > 0) & key_mask)
        else:
            s = T.softmax(scores, key_mask)
            gamma = self.gate_raw * self.gate_raw
            blended = s * (1.0 + gamma * a_plus[..., None, :, :])
            denom = T.tsum(blended, axis=-1, keepdims=True)
            probs = blended / (denom + (denom.data == 0))
        self.last_attention = probs.data
        return _merge_heads(probs @ v)

    def __call__(self, x: Tensor, mask: np.ndarray, adj: np.ndarray) -> Tensor:
        x = self.norm1(x + self.out(self.attention(x, mask, adj)))
        return self.norm2(x + self.ff(x))


class GraphTransformer(Module):
    def __init__(self, d: int, n_layers: int, heads: int, gate: str, gate_init: float, rng: np.random.Generator) -> None:
        self.layers = [GraphTransformerLayer(d, heads, gate, gate_init, rng) for _ in range(n_layers)]

    def __call__(self, m: Tensor, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        h = m
        for layer in self.layers:
            h = layer(h, batch.mask, batch.adj)
        per_atom = h * batch.mask[..., None].astype(np.float64)
        return per_atom, readout_sum(per_atom)


class GraphEncoder(Module):
    """Shared input embedding feeding both the local and the global encoder."""

    def __init__(self, cfg: GraphEncoderConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        d = cfg.hidden_dim
        self.embed = GraphInputEmbedding(d, rng)
        self.local = AttentiveFP(d, cfg.local_layers, rng)
        self.globl = GraphTransformer(d, cfg.global_layers, cfg.heads, cfg.adjacency_gate, cfg.gate_init, rng)

    def __call__(self, batch: GraphBatch) -> GraphEncoding:
        m = self.embed(batch.x)
        per_local, z_local = self.local(m, batch)
        per_global, z_global = self.globl(m, batch)
        return GraphEncoding(z_local, z_global, per_local, per_global)


def embed_graph_inputs(g: FeaturizedGraph, embedding: GraphInputEmbedding) -> Tensor:
    return embedding(g.node_inputs())


def attentivefp_forward(m: Tensor, g: FeaturizedGraph | GraphBatch, encoder: AttentiveFP) -> tuple[Tensor, Tensor]:
    return encoder(m, g if isinstance(g, GraphBatch) else _single(g))


def graph_transformer_forward(m: Tensor, g: FeaturizedGraph | GraphBatch, encoder: GraphTransformer) -> tuple[Tensor, Tensor]:
    return encoder(m, g if isinstance(g, GraphBatch) else _single(g))


def _single(g: FeaturizedGraph) -> GraphBatch:
    n = g.n_atoms
    return GraphBatch(g.node_inputs(), np.ones(n, dtype=bool), g.adjacency)
