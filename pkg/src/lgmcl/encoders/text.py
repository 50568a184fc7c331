"""Tokenizers, vocabulary and the disentangled-attention text encoder."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..autodiff import ops as T
from ..autodiff.nn import MLP, Embedding, LayerNorm, Linear, Module
from ..autodiff.rng import glorot_uniform
from ..autodiff.tensor import Parameter, Tensor
from ..errors import ConfigError, ShapeError

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)

_SMILES_TOKEN = re.compile(r"\[[^\]]*\]|Br|Cl|Si|Se|As|Te|At|%\d\d|\S")
_TEXT_TOKEN = re.compile(r"\d+(?:\.\d+)?|[^\W\d_]+|\S")


def smiles_tokenize(s: str) -> list[str]:
    return _SMILES_TOKEN.findall(s)


def text_tokenize(s: str) -> list[str]:
    return _TEXT_TOKEN.findall(s.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str]) -> None:
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @classmethod
    def build(cls, corpus: Iterable[Sequence[str]], min_freq: int = 1) -> "Vocabulary":
        counts = Counter(t for seq in corpus for t in seq)
        kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIALS), key=lambda t: (-counts[t], t))
        return cls(list(SPECIALS) + kept)

    def encode(self, tokens: Sequence[str], max_len: int = 256) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens[:max_len]]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass
class TextEncoderConfig:
    layers: int = 4
    hidden_dim: int = 128
    heads: int = 4
    max_relative: int = 64
    max_len: int = 256
    pooling: str = "mean"
    towers: int = 1

    def __post_init__(self) -> None:
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.layers < 1 or self.max_relative < 1 or self.max_len < 1:
            raise ConfigError("text encoder layers, max_relative and max_len must be positive")
        if self.pooling != "mean":
            raise ConfigError(f"unsupported pooling {self.pooling!r}")
        if self.towers not in (1, 2):
            raise ConfigError("towers must be 1 (shared encoder) or 2 (separate SMILES/text encoders)")


@dataclass
class TextBatch:
    ids: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_ids(cls, seqs: Sequence[Sequence[int]], pad_to: int | None = None) -> "TextBatch":
        if not seqs:
            raise ValueError("cannot batch zero sequences")
        if any(len(s) == 0 for s in seqs):
            raise ValueError("cannot encode an empty token sequence")
        n = max(len(s) for s in seqs)
        if pad_to is not None:
            n = max(n, pad_to)
        ids = np.full((len(seqs), n), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(seqs), n), dtype=bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
            mask[i, : len(s)] = True
        return cls(ids, mask)


def relative_positions(n: int, k: int) -> np.ndarray:
    """delta[i, j] = clip(i - j + k, 0, 2k - 1)."""
    idx = np.arange(n)
    return np.clip(idx[:, None] - idx[None, :] + k, 0, 2 * k - 1)


def _heads(x: Tensor, h: int) -> Tensor:
    *lead, n, d = x.shape
    return T.swapaxes(T.reshape(x, tuple(lead) + (n, h, d // h)), -2, -3)


def _merge(x: Tensor) -> Tensor:
    x = T.swapaxes(x, -2, -3)
    *lead, n, h, dk = x.shape
    return T.reshape(x, tuple(lead) + (n, h * dk))


class DisentangledAttentionLayer(Module):
    def __init__(self, d: int, heads: int, k: int, rng: np.random.Generator) -> None:
        self.heads = heads
        self.k = k
        self.q = Linear(d, d, rng)
        self.kc = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.q_pos = Linear(d, d, rng, bias=False)
        self.k_pos = Linear(d, d, rng, bias=False)
        self.out = Linear(d, d, rng)
        self.norm1 = LayerNorm(d)
        self.ff = MLP(d, 2 * d, d, rng)
        self.norm2 = LayerNorm(d)
        self.last_attention: np.ndarray | None = None

    def scores(self, h: Tensor, pos: Tensor) -> Tensor:
        """Unscaled content-content + content-position + position-content scores."""
        n = h.shape[-2]
        delta = relative_positions(n, self.k)
        qc, kc = _heads(self.q(h), self.heads), _heads(self.kc(h), self.heads)
        qr, kr = _heads(self.q_pos(pos), self.heads), _heads(self.k_pos(pos), self.heads)
        c2c = qc @ T.swapaxes(kc, -1, -2)
        c2p = T.gather_last(qc @ T.swapaxes(kr, -1, -2), delta)
        p2c = T.swapaxes(T.gather_last(kc @ T.swapaxes(qr, -1, -2), delta), -1, -2)
        return c2c + c2p + p2c

    def attention(self, h: Tensor, pos: Tensor, mask: np.ndarray) -> Tensor:
        dh = h.shape[-1] // self.heads
        scaled = self.scores(h, pos) * (1.0 / np.sqrt(3.0 * dh))
        probs = T.softmax(scaled, mask[..., None, None, :])
        self.last_attention = probs.data
        return _merge(probs @ _heads(self.v(h), self.heads))

    def __call__(self, h: Tensor, pos: Tensor, mask: np.ndarray) -> Tensor:
        h = self.norm1(h + self.out(self.attention(h, pos, mask)))
        return self.norm2(h + self.ff(h))


def disentangled_attention(h, pos, layer: DisentangledAttentionLayer, mask: np.ndarray | None = None) -> Tensor:
    h, pos = T.as_tensor(h), T.as_tensor(pos)
    if pos.shape != (2 * layer.k, h.shape[-1]):
        raise ShapeError(f"position table {pos.shape} does not match (2k, d) = {(2 * layer.k, h.shape[-1])}")
    if mask is None:
        mask = np.ones(h.shape[:-1], dtype=bool)
    return layer(h, pos, mask)


class TextEncoder(Module):
    def __init__(self, cfg: TextEncoderConfig, vocab_size: int, rng: np.random.Generator) -> None:
        self.cfg = cfg
        d = cfg.hidden_dim
        self.embed = Embedding(vocab_size, d, rng)
        self.embed_norm = LayerNorm(d)
        self.positions = Parameter(glorot_uniform(rng, 2 * cfg.max_relative, d))
        self.layers = [DisentangledAttentionLayer(d, cfg.heads, cfg.max_relative, rng) for _ in range(cfg.layers)]

    @property
    def vocab_size(self) -> int:
        return self.embed.table.shape[0]

    def states(self, batch: TextBatch) -> Tensor:
        h = self.embed_norm(self.embed(batch.ids))
        for layer in self.layers:
            h = layer(h, self.positions, batch.mask)
        return h

    def __call__(self, batch: TextBatch) -> Tensor:
        """Mean of final states over non-pad positions, (B, d)."""
        if batch.ids.shape[1] > self.cfg.max_len:
            raise ShapeError(f"sequence length {batch.ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        h = self.states(batch)
        w = batch.mask.astype(np.float64)
        w = w / w.sum(axis=1, keepdims=True)
        return T.tsum(h * w[..., None], axis=1)


def encode_text(ids: Sequence[int], encoder: TextEncoder) -> Tensor:
    if len(ids) == 0:
        raise ValueError("cannot encode an empty token sequence")
    return encoder(TextBatch.from_ids([list(ids)[: encoder.cfg.max_len]]))[0]


class TextTowers(Module):
    """One shared encoder for both views, or separate SMILES and description towers."""

    def __init__(self, cfg: TextEncoderConfig, vocab_size: int, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.smiles = TextEncoder(cfg, vocab_size, rng)
        self.description = TextEncoder(cfg, vocab_size, rng) if cfg.towers == 2 else None

    def encode_smiles(self, batch: TextBatch) -> Tensor:
        return self.smiles(batch)

    def encode_description(self, batch: TextBatch) -> Tensor:
        return (self.description or self.smiles)(batch)
