"""NT-Xent objectives and the graph / text pretraining loops."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import ops as T
from .autodiff.nn import MLP, Module
from .autodiff.optim import Adam
from .autodiff.rng import make_rng
from .autodiff.tensor import Tape, Tensor, backward
from .encoders.graph import GraphBatch, GraphEncoder
from .encoders.text import TextBatch, TextTowers
from .errors import ConfigError, DataError, ShapeError, TrainingError
from .featurizer import FeaturizedGraph


@dataclass
class NTXentConfig:
    temperature: float = 0.1
    symmetrize: bool = False

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


def _directional(za: Tensor, zb: Tensor, tau: float) -> Tensor:
    na, nb = T.l2_normalize(za), T.l2_normalize(zb)
    s_aa = (na @ T.swapaxes(na, 0, 1)) * (1.0 / tau)
    s_ab = (nb @ T.swapaxes(na, 0, 1)) * (1.0 / tau)
    s_ab = T.swapaxes(s_ab, 0, 1)
    n = za.shape[0]
    eye = np.eye(n)
    logits = T.concat([s_aa, s_ab], axis=1)
    mask = np.concatenate([eye == 0, np.ones((n, n), dtype=bool)], axis=1)
    positives = T.tsum(s_ab * eye, axis=1)
    return T.mean(T.logsumexp(logits, mask) - positives)


def nt_xent_loss(za, zb, cfg: NTXentConfig | None = None) -> Tensor:
    """Anchor view ``za``; negatives are the other anchors plus every ``zb``."""
    cfg = cfg or NTXentConfig()
    za, zb = T.as_tensor(za), T.as_tensor(zb)
    if za.ndim != 2 or za.shape != zb.shape:
        raise ShapeError(f"nt_xent_loss: views must share an (N, d) shape, got {za.shape} and {zb.shape}")
    if za.shape[0] < 1:
        raise ValueError("nt_xent_loss needs at least one pair")
    loss = _directional(za, zb, cfg.temperature)
    if cfg.symmetrize:
        loss = (loss + _directional(zb, za, cfg.temperature)) * 0.5
    return loss


def nt_xent_reference(za: np.ndarray, zb: np.ndarray, temperature: float = 0.1, symmetrize: bool = False) -> float:
    """Scalar double loop, kept deliberately naive as an oracle."""

    def cos(x, y):
        nx = max(math.sqrt(sum(v * v for v in x)), 1e-12)
        ny = max(math.sqrt(sum(v * v for v in y)), 1e-12)
        return sum(p * q for p, q in zip(x, y)) / (nx * ny)

    def one_way(a, b):
        n = len(a)
        total = 0.0
        for i in range(n):
            num = math.exp(cos(a[i], b[i]) / temperature)
            den = 0.0
            for k in range(n):
                if k != i:
                    den += math.exp(cos(a[i], a[k]) / temperature)
                den += math.exp(cos(a[i], b[k]) / temperature)
            total += -math.log(num / den)
        return total / n

    a, b = np.asarray(za).tolist(), np.asarray(zb).tolist()
    loss = one_way(a, b)
    return 0.5 * (loss + one_way(b, a)) if symmetrize else loss


def retrieval_accuracy(za: np.ndarray, zb: np.ndarray) -> float:
    """Fraction of rows whose most cosine-similar cross-view row is their own pair."""
    na = za / np.maximum(np.linalg.norm(za, axis=1, keepdims=True), 1e-12)
    nb = zb / np.maximum(np.linalg.norm(zb, axis=1, keepdims=True), 1e-12)
    return float(np.mean(np.argmax(na @ nb.T, axis=1) == np.arange(len(za))))


class ProjectionHead(Module):
    def __init__(self, d: int, d_proj: int, rng: np.random.Generator) -> None:
        self.mlp = MLP(d, d, d_proj, rng)

    def __call__(self, x) -> Tensor:
        return self.mlp(x)


class GraphPretrainModel(Module):
    def __init__(self, graph: GraphEncoder, d_proj: int, rng: np.random.Generator) -> None:
        self.graph = graph
        d = graph.cfg.hidden_dim
        self.proj_global = ProjectionHead(d, d_proj, rng)
        self.proj_local = ProjectionHead(d, d_proj, rng)

    def views(self, batch: GraphBatch) -> tuple[Tensor, Tensor]:
        enc = self.graph(batch)
        return self.proj_global(enc.z_global), self.proj_local(enc.z_local)


class TextPretrainModel(Module):
    def __init__(self, text: TextTowers, d_proj: int, rng: np.random.Generator) -> None:
        self.text = text
        d = text.cfg.hidden_dim
        self.proj_smiles = ProjectionHead(d, d_proj, rng)
        self.proj_description = ProjectionHead(d, d_proj, rng)

    def views(self, smiles: TextBatch, description: TextBatch) -> tuple[Tensor, Tensor]:
        zs = self.text.encode_smiles(smiles)
        za = self.text.encode_description(description)
        return self.proj_smiles(zs), self.proj_description(za)


@dataclass
class PretrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    temperature: float = 0.1
    symmetrize: bool = False
    projection_dim: int = 64
    seed: int = 0


@dataclass
class PretrainResult:
    history: list[tuple[int, int, float]] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    optimizer: Adam | None = None

    def write_history(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "step", "loss"])
            for epoch, step, loss in self.history:
                w.writerow([epoch, step, repr(loss)])


def minibatches(n: int, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Shuffled (or in-order when ``rng`` is None) index batches; the last partial batch is kept."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _train_loop(
    n: int,
    model: Module,
    views: Callable[[np.ndarray], tuple[Tensor, Tensor]],
    cfg: PretrainConfig,
    stream: str,
    log: Callable[[str], None] | None,
    optimizer: Adam | None = None,
) -> PretrainResult:
    if n == 0:
        raise DataError("pretraining dataset is empty")
    loss_cfg = NTXentConfig(cfg.temperature, cfg.symmetrize)
    opt = optimizer or Adam(model.parameters(), lr=cfg.lr)
    shuffle = make_rng(cfg.seed, stream, "shuffle")
    result = PretrainResult(optimizer=opt)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in minibatches(n, cfg.batch_size, shuffle):
            opt.zero_grad()
            try:
                with Tape():
                    za, zb = views(idx)
                    loss = nt_xent_loss(za, zb, loss_cfg)
                    backward(loss)
            except FloatingPointError as exc:
                raise TrainingError(f"{stream}: non-finite value at epoch {epoch} step {step}: {exc}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"{stream}: non-finite loss at epoch {epoch} step {step}")
            opt.step()
            step += 1
            losses.append(value)
            result.history.append((epoch, step, value))
        result.epoch_loss.append(float(np.mean(losses)))
        if log:
            log(f"{stream} epoch={epoch} loss={result.epoch_loss[-1]:.6f}")
    return result


def pretrain_graph(
    graphs: Sequence[FeaturizedGraph],
    model: GraphPretrainModel,
    cfg: PretrainConfig,
    log: Callable[[str], None] | None = None,
    optimizer: Adam | None = None,
) -> PretrainResult:
    """Global view is the anchor, local view the positive."""

    def views(idx):
        return model.views(GraphBatch.from_graphs([graphs[i] for i in idx]))

    return _train_loop(len(graphs), model, views, cfg, "pretrain-graph", log, optimizer)


def pretrain_text(
    smiles_ids: Sequence[Sequence[int]],
    text_ids: Sequence[Sequence[int]],
    model: TextPretrainModel,
    cfg: PretrainConfig,
    log: Callable[[str], None] | None = None,
    optimizer: Adam | None = None,
) -> PretrainResult:
    """SMILES view is the anchor, the description view the positive."""
    if len(smiles_ids) != len(text_ids):
        raise DataError(f"{len(smiles_ids)} SMILES sequences but {len(text_ids)} descriptions")

    def views(idx):
        return model.views(
            TextBatch.from_ids([smiles_ids[i] for i in idx]), TextBatch.from_ids([text_ids[i] for i in idx])
        )

    return _train_loop(len(smiles_ids), model, views, cfg, "pretrain-text", log, optimizer)


def graph_retrieval(graphs: Sequence[FeaturizedGraph], model: GraphPretrainModel, batch_size: int = 32) -> float:
    hits = total = 0
    for idx in minibatches(len(graphs), batch_size, None):
        za, zb = model.views(GraphBatch.from_graphs([graphs[i] for i in idx]))
        hits += retrieval_accuracy(za.data, zb.data) * len(idx)
        total += len(idx)
    return hits / total


def text_retrieval(
    smiles_ids: Sequence[Sequence[int]], text_ids: Sequence[Sequence[int]], model: TextPretrainModel, batch_size: int = 32
) -> float:
    hits = total = 0
    for idx in minibatches(len(smiles_ids), batch_size, None):
        za, zb = model.views(
            TextBatch.from_ids([smiles_ids[i] for i in idx]), TextBatch.from_ids([text_ids[i] for i in idx])
        )
        hits += retrieval_accuracy(za.data, zb.data) * len(idx)
        total += len(idx)
    return hits / total
