"""Multimodal fine-tuning: modality consolidation, fusion, task head and training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import ops as T
from .autodiff.nn import MLP, LayerNorm, Linear, Module
from .autodiff.optim import Adam
from .autodiff.rng import make_rng
from .autodiff.tensor import Tape, Tensor, backward
from .contrastive import minibatches
from .data import DatasetTable, Split
from .encoders.graph import GraphBatch, GraphEncoder, GraphEncoderConfig
from .encoders.text import TextBatch, TextEncoderConfig, TextTowers, Vocabulary, smiles_tokenize, text_tokenize
from .errors import ConfigError, DataError, ShapeError, TrainingError
from .featurizer import FeaturizedGraph, featurize, generate_template_text
from .metrics import rmse, roc_auc

MODALITIES = ("T", "F", "G")
AGGREGATIONS = ("dual_cross_attention", "sum", "concat")
PAIRINGS = {"fingerprint_centered": "F", "graph_centered": "G", "text_centered": "T"}


def parse_modalities(spec: str | Sequence[str]) -> tuple[str, ...]:
    items = spec.replace("+", ",").split(",") if isinstance(spec, str) else list(spec)
    chosen = {s.strip().upper() for s in items if s.strip()}
    unknown = chosen - set(MODALITIES)
    if unknown:
        raise ConfigError(f"unknown modalities {sorted(unknown)}; use a subset of T, F, G")
    if not chosen:
        raise ConfigError("at least one modality must be active")
    return tuple(m for m in MODALITIES if m in chosen)


@dataclass
class FusionConfig:
    modalities: tuple[str, ...] = MODALITIES
    aggregation: str = "dual_cross_attention"
    pairing: str = "fingerprint_centered"
    pretrained_init: tuple[str, ...] = ()
    heads: int = 4

    def __post_init__(self) -> None:
        self.modalities = parse_modalities(self.modalities)
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.pairing not in PAIRINGS:
            raise ConfigError(f"pairing must be one of {tuple(PAIRINGS)}, got {self.pairing!r}")
        bad = set(self.pretrained_init) - {"text", "graph"}
        if bad:
            raise ConfigError(f"pretrained_init entries must be 'text' or 'graph', got {sorted(bad)}")

    @property
    def center(self) -> str:
        return PAIRINGS[self.pairing]


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    n_tasks: int
    metric: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("classification", "regression"):
            raise ConfigError(f"task kind must be classification or regression, got {self.kind!r}")
        if self.n_tasks < 1:
            raise ConfigError("n_tasks must be at least 1")
        if not self.metric:
            object.__setattr__(self, "metric", "roc_auc" if self.kind == "classification" else "rmse")


def _heads(x: Tensor, h: int) -> Tensor:
    *lead, n, d = x.shape
    return T.swapaxes(T.reshape(x, tuple(lead) + (n, h, d // h)), -2, -3)


class CrossAttentionBlock(Module):
    """A single query vector attends over a small token set; residual + layer norm."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator) -> None:
        if d % heads:
            raise ConfigError(f"hidden_dim {d} not divisible by heads {heads}")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.norm = LayerNorm(d)
        self.last_attention: np.ndarray | None = None

    def __call__(self, query: Tensor, tokens: Tensor) -> Tensor:
        b, d = query.shape
        q = _heads(T.reshape(self.q(query), (b, 1, d)), self.heads)
        k, v = _heads(self.k(tokens), self.heads), _heads(self.v(tokens), self.heads)
        scores = (q @ T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d // self.heads))
        probs = T.softmax(scores)
        self.last_attention = probs.data
        mixed = T.reshape(T.swapaxes(probs @ v, 1, 2), (b, d))
        return self.norm(query + self.out(mixed))


def consolidate_graph(z_local, z_global, block: CrossAttentionBlock) -> Tensor:
    z_local, z_global = T.as_tensor(z_local), T.as_tensor(z_global)
    return block(z_local, T.stack([z_local, z_global], axis=1))


def consolidate_text(z_s, z_a, block: CrossAttentionBlock) -> Tensor:
    z_s, z_a = T.as_tensor(z_s), T.as_tensor(z_a)
    return block(z_s, T.stack([z_s, z_a], axis=1))


class FingerprintMLP(Module):
    def __init__(self, n_bits: int, d: int, rng: np.random.Generator) -> None:
        self.n_bits = n_bits
        self.mlp = MLP(n_bits, d, d, rng)

    def __call__(self, fp) -> Tensor:
        fp = T.as_tensor(fp)
        if fp.shape[-1] != self.n_bits:
            raise ShapeError(f"fingerprint width {fp.shape[-1]} does not match trained MLP input {self.n_bits}")
        return self.mlp(fp)


def fingerprint_embed(fp, mlp: FingerprintMLP) -> Tensor:
    return mlp(fp)


class DualPair(Module):
    """Bidirectional exchange between two modality embeddings, merged to width d."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator) -> None:
        self.first_queries = CrossAttentionBlock(d, heads, rng)
        self.second_queries = CrossAttentionBlock(d, heads, rng)
        self.combine = Linear(2 * d, d, rng)

    def __call__(self, a: Tensor, b: Tensor) -> Tensor:
        out_a = self.first_queries(a, T.stack([a, b], axis=1))
        out_b = self.second_queries(b, T.stack([b, a], axis=1))
        return self.combine(T.concat([out_a, out_b], axis=-1))


def pair_plan(active: Sequence[str], center: str) -> list[tuple[str, str]]:
    if len(active) < 2:
        return []
    if center in active:
        return [(center, m) for m in active if m != center]
    return [(active[0], active[1])]


@dataclass
class MultimodalBatch:
    graph: GraphBatch | None = None
    smiles: TextBatch | None = None
    text: TextBatch | None = None
    fingerprint: np.ndarray | None = None
    labels: np.ndarray | None = None
    mask: np.ndarray | None = None


class FusionModel(Module):
    def __init__(
        self,
        cfg: FusionConfig,
        task: TaskSpec,
        rng: np.random.Generator,
        graph_cfg: GraphEncoderConfig | None = None,
        text_cfg: TextEncoderConfig | None = None,
        vocab_size: int = 0,
        fp_bits: int = 0,
    ) -> None:
        self.cfg = cfg
        self.task = task
        active = cfg.modalities
        d = None
        self.graph = self.graph_block = self.text = self.text_block = self.fingerprint = None
        if "G" in active:
            if graph_cfg is None:
                raise ConfigError("graph modality active but no graph encoder config")
            d = graph_cfg.hidden_dim
            self.graph = GraphEncoder(graph_cfg, rng)
            self.graph_block = CrossAttentionBlock(d, cfg.heads, rng)
        if "T" in active:
            if text_cfg is None or vocab_size <= 0:
                raise ConfigError("text modality active but no text encoder config or vocabulary")
            if d is not None and text_cfg.hidden_dim != d:
                raise ConfigError("text and graph encoders must share hidden_dim")
            d = text_cfg.hidden_dim
            self.text = TextTowers(text_cfg, vocab_size, rng)
            self.text_block = CrossAttentionBlock(d, cfg.heads, rng)
        if "F" in active:
            if fp_bits <= 0:
                raise ConfigError("fingerprint modality active but fingerprint width is 0")
            if d is None:
                d = (graph_cfg or text_cfg or GraphEncoderConfig()).hidden_dim
            self.fingerprint = FingerprintMLP(fp_bits, d, rng)
        self.hidden_dim = d
        self.pairs: dict[str, DualPair] = {}
        if cfg.aggregation == "dual_cross_attention":
            for a, b in pair_plan(active, cfg.center):
                self.pairs[f"{a}_{b}"] = DualPair(d, cfg.heads, rng)
        width = d * len(active) if cfg.aggregation == "concat" else d
        self.head = MLP(width, d, task.n_tasks, rng)
        self.target_mean = np.zeros(task.n_tasks)
        self.target_std = np.ones(task.n_tasks)

    @property
    def representation_dim(self) -> int:
        return self.hidden_dim * len(self.cfg.modalities) if self.cfg.aggregation == "concat" else self.hidden_dim

    def embeddings(self, batch: MultimodalBatch, active: Sequence[str] | None = None) -> dict[str, Tensor]:
        active = self.cfg.modalities if active is None else active
        out: dict[str, Tensor] = {}
        if "G" in active:
            if batch.graph is None:
                raise DataError("graph modality configured but batch has no graphs")
            enc = self.graph(batch.graph)
            out["G"] = consolidate_graph(enc.z_local, enc.z_global, self.graph_block)
        if "T" in active:
            if batch.smiles is None or batch.text is None:
                raise DataError("text modality configured but batch lacks SMILES or description tokens")
            zs = self.text.encode_smiles(batch.smiles)
            za = self.text.encode_description(batch.text)
            out["T"] = consolidate_text(zs, za, self.text_block)
        if "F" in active:
            if batch.fingerprint is None:
                raise DataError("fingerprint modality configured but batch has no fingerprints")
            out["F"] = self.fingerprint(batch.fingerprint)
        return out

    def fuse(self, embs: dict[str, Tensor], active: Sequence[str] | None = None) -> Tensor:
        active = [m for m in MODALITIES if m in (self.cfg.modalities if active is None else active)]
        missing = [m for m in active if m not in embs]
        if missing:
            raise DataError(f"modality embeddings absent but configured: {missing}")
        if len(active) == 1:
            return embs[active[0]]
        agg = self.cfg.aggregation
        if agg == "sum":
            total = embs[active[0]]
            for m in active[1:]:
                total = total + embs[m]
            return total
        if agg == "concat":
            if len(active) != len(self.cfg.modalities):
                raise ConfigError("concat aggregation cannot drop modalities at run time")
            return T.concat([embs[m] for m in active], axis=-1)
        fused = None
        for a, b in pair_plan(active, self.cfg.center):
            key = f"{a}_{b}"
            if key not in self.pairs:
                raise ConfigError(f"no trained pair {key!r} for active modalities {active}")
            out = self.pairs[key](embs[a], embs[b])
            fused = out if fused is None else fused + out
        return fused

    def __call__(self, batch: MultimodalBatch, active: Sequence[str] | None = None) -> Tensor:
        active = self.cfg.modalities if active is None else parse_modalities(active)
        extra = set(active) - set(self.cfg.modalities)
        if extra:
            raise ConfigError(f"modalities {sorted(extra)} are not part of this model")
        return self.head(self.fuse(self.embeddings(batch, active), active))

    def scores(self, raw: np.ndarray) -> np.ndarray:
        """Sigmoid probabilities or de-standardized regression values."""
        if self.task.kind == "classification":
            return 1.0 / (1.0 + np.exp(-raw))
        return raw * self.target_std + self.target_mean


def predict(rep, head: MLP, task: TaskSpec) -> Tensor:
    out = head(rep)
    if out.shape[-1] != task.n_tasks:
        raise ShapeError(f"head width {out.shape[-1]} does not match {task.n_tasks} tasks")
    return out


# -- inputs ------------------------------------------------------------------

@dataclass
class MolecularInputs:
    """Per-molecule precomputed inputs for the configured modalities."""

    graphs: list[FeaturizedGraph] | None
    smiles_ids: list[list[int]] | None
    text_ids: list[list[int]] | None
    fingerprints: np.ndarray | None
    labels: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]

    def batch(self, idx: Sequence[int]) -> MultimodalBatch:
        idx = list(idx)
        return MultimodalBatch(
            graph=GraphBatch.from_graphs([self.graphs[i] for i in idx]) if self.graphs is not None else None,
            smiles=TextBatch.from_ids([self.smiles_ids[i] for i in idx]) if self.smiles_ids is not None else None,
            text=TextBatch.from_ids([self.text_ids[i] for i in idx]) if self.text_ids is not None else None,
            fingerprint=self.fingerprints[idx] if self.fingerprints is not None else None,
            labels=self.labels[idx],
            mask=self.mask[idx],
        )


def description_texts(table: DatasetTable, fallback: bool = True) -> list[str]:
    texts = []
    for ident, mol, text in zip(table.ids, table.molecules, table.texts):
        if text is None:
            if not fallback:
                raise DataError(f"molecule {ident!r} has no augmented text and template fallback is off")
            text = generate_template_text(mol)
        texts.append(text)
    return texts


def token_views(table: DatasetTable, fallback: bool = True) -> tuple[list[list[str]], list[list[str]]]:
    return [smiles_tokenize(s) for s in table.smiles], [text_tokenize(t) for t in description_texts(table, fallback)]


def prepare_inputs(
    table: DatasetTable,
    modalities: Sequence[str],
    vocab: Vocabulary | None = None,
    fingerprints: np.ndarray | None = None,
    max_len: int = 256,
    text_fallback: bool = True,
) -> MolecularInputs:
    graphs = [featurize(m) for m in table.molecules] if "G" in modalities else None
    smiles_ids = text_ids = None
    if "T" in modalities:
        if vocab is None:
            raise ConfigError("text modality needs a vocabulary")
        sm, tx = token_views(table, text_fallback)
        smiles_ids = [vocab.encode(s, max_len) or [vocab.index.get("<unk>", 1)] for s in sm]
        text_ids = [vocab.encode(t, max_len) or [vocab.index.get("<unk>", 1)] for t in tx]
    fp = None
    if "F" in modalities:
        if fingerprints is None or fingerprints.shape[0] != len(table):
            raise ConfigError("fingerprint modality needs one fingerprint row per molecule")
        fp = fingerprints
    return MolecularInputs(graphs, smiles_ids, text_ids, fp, table.labels, table.mask)


# -- training ----------------------------------------------------------------

def masked_loss(raw: Tensor, labels: np.ndarray, mask: np.ndarray, task: TaskSpec) -> Tensor:
    """Mean over observed entries; a batch with nothing observed gives a zero loss."""
    w = mask.astype(np.float64)
    count = max(w.sum(), 1.0)
    if task.kind == "classification":
        per = T.bce_with_logits(raw, labels * w)
    else:
        diff = raw - labels * w
        per = diff * diff
    return T.tsum(per * w) * (1.0 / count)


@dataclass
class FinetuneConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    eval_batch_size: int = 128


@dataclass
class SplitMetrics:
    metric: str
    value: float | None
    per_task: list[float | None]


@dataclass
class FinetuneResult:
    best_epoch: int
    history: list[tuple[int, float, float | None]] = field(default_factory=list)
    metrics: dict[str, SplitMetrics] = field(default_factory=dict)


def predict_scores(model: FusionModel, inputs: MolecularInputs, idx: Sequence[int], batch_size: int = 128, active=None) -> np.ndarray:
    rows = []
    idx = np.asarray(idx, dtype=np.int64)
    for chunk in minibatches(len(idx), batch_size, None):
        rows.append(model.scores(model(inputs.batch(idx[chunk]), active).data))
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, model.task.n_tasks))


def evaluate_split(model: FusionModel, inputs: MolecularInputs, idx: Sequence[int], batch_size: int = 128, active=None) -> SplitMetrics:
    idx = np.asarray(idx, dtype=np.int64)
    scores = predict_scores(model, inputs, idx, batch_size, active)
    labels, mask = inputs.labels[idx], inputs.mask[idx]
    if model.task.kind == "classification":
        res = roc_auc(scores, labels, mask)
        return SplitMetrics("roc_auc", res.macro, res.per_task)
    per = []
    for t in range(labels.shape[1]):
        sel = mask[:, t]
        per.append(rmse(scores[sel, t], labels[sel, t]) if sel.any() else None)
    value = rmse(scores, labels, mask) if mask.any() else None
    return SplitMetrics("rmse", value, per)


def _standardize(model: FusionModel, inputs: MolecularInputs, train: np.ndarray) -> np.ndarray:
    labels = inputs.labels.copy()
    if model.task.kind != "regression":
        return labels
    y, m = inputs.labels[train], inputs.mask[train]
    for t in range(labels.shape[1]):
        obs = y[m[:, t], t]
        mu = float(obs.mean()) if obs.size else 0.0
        sd = float(obs.std()) if obs.size > 1 else 1.0
        model.target_mean[t] = mu
        model.target_std[t] = sd if sd > 0 else 1.0
    return (labels - model.target_mean) / model.target_std


def _selection_score(m: SplitMetrics) -> float:
    if m.value is None:
        return -math.inf
    return m.value if m.metric == "roc_auc" else -m.value


def finetune(
    model: FusionModel,
    inputs: MolecularInputs,
    split: Split,
    cfg: FinetuneConfig,
    log: Callable[[str], None] | None = None,
) -> FinetuneResult:
    """Train all parameters; keep the state with the best validation metric."""
    for name, part in split.as_dict().items():
        if len(part) == 0:
            raise DataError(f"{name} split is empty")
    if inputs.labels.shape[1] != model.task.n_tasks:
        raise ShapeError(f"labels have {inputs.labels.shape[1]} tasks, model expects {model.task.n_tasks}")
    targets = _standardize(model, inputs, split.train)
    opt = Adam(model.parameters(), lr=cfg.lr)
    shuffle = make_rng(cfg.seed, "finetune", "shuffle")
    best_score, best_state, best_epoch = -math.inf, model.state_dict(), 0
    result = FinetuneResult(best_epoch=0)
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for chunk in minibatches(len(split.train), cfg.batch_size, shuffle):
            idx = split.train[chunk]
            batch = inputs.batch(idx)
            opt.zero_grad()
            try:
                with Tape():
                    loss = masked_loss(model(batch), targets[idx], inputs.mask[idx], model.task)
                    backward(loss)
            except FloatingPointError as exc:
                raise TrainingError(f"finetune: non-finite value at epoch {epoch}: {exc}") from exc
            opt.step()
            losses.append(loss.item())
        valid = evaluate_split(model, inputs, split.valid, cfg.eval_batch_size)
        result.history.append((epoch, float(np.mean(losses)), valid.value))
        score = _selection_score(valid)
        if score > best_score or best_epoch == 0:
            best_score, best_state, best_epoch = score, model.state_dict(), epoch
        if log:
            log(f"finetune epoch={epoch} train_loss={np.mean(losses):.6f} valid_{valid.metric}={valid.value}")
    model.load_state_dict(best_state)
    result.best_epoch = best_epoch
    for name, part in split.as_dict().items():
        result.metrics[name] = evaluate_split(model, inputs, part, cfg.eval_batch_size)
    return result


def load_pretrained(model: FusionModel, state: dict[str, np.ndarray], which: str) -> list[str]:
    """Copy ``graph.*`` or ``text.*`` blocks from a pretraining state into ``model``."""
    prefix = {"graph": "graph.", "text": "text."}[which]
    subset = {k: v for k, v in state.items() if k.startswith(prefix)}
    if not subset:
        raise ConfigError(f"pretraining state has no {prefix}* parameters")
    return model.load_state_dict(subset, strict=False)
