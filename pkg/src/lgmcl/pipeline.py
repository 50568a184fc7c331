"""Run orchestration shared by the command line and the test suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff.optim import Adam
from .autodiff.rng import make_rng
from .checkpoint import Checkpoint, apply_checkpoint, checkpoint_from_model, load_checkpoint, restore_optimizer
from .config import RunConfig, default_values
from .contrastive import (
    GraphPretrainModel,
    PretrainResult,
    TextPretrainModel,
    graph_retrieval,
    pretrain_graph,
    pretrain_text,
    text_retrieval,
)
from .data import DatasetTable, load_dataset, make_split, resolve_dataset_path
from .encoders.graph import GraphEncoder
from .encoders.text import TextTowers, Vocabulary
from .errors import CheckpointError, DataError
from .featurizer import featurize
from .fingerprints import fingerprint_block
from .fusion import (
    FinetuneResult,
    FusionModel,
    MolecularInputs,
    TaskSpec,
    evaluate_split,
    finetune,
    prepare_inputs,
    token_views,
)
from .metrics import MetricReport

log = logging.getLogger(__name__)
Logger = Callable[[str], None] | None


def _say(logger: Logger, msg: str) -> None:
    if logger is not None:
        logger(msg)


def _dataset_name(spec: str) -> str:
    return Path(spec.split(":", 1)[1]).stem if spec.startswith("bundled:") else Path(spec).stem


def load_pretrain_table(cfg: RunConfig) -> DatasetTable:
    d = cfg["data"]
    table = load_dataset(resolve_dataset_path(d["pretrain_dataset"]), d["pretrain_text"] or None, require_labels=False)
    limit = cfg["pretrain"]["limit"]
    return table.subset(range(min(limit, len(table)))) if limit > 0 else table


def load_task_table(cfg: RunConfig) -> DatasetTable:
    d = cfg["data"]
    return load_dataset(resolve_dataset_path(d["dataset"]), d["text"] or None, d["tasks"] or None)


def infer_task(cfg: RunConfig, table: DatasetTable) -> TaskSpec:
    kind = cfg["finetune"]["task"]
    if kind == "auto":
        vals = table.labels[table.mask]
        kind = "classification" if np.isin(vals, (0.0, 1.0)).all() else "regression"
    if kind == "classification":
        table.check_binary()
    return TaskSpec(kind, table.n_tasks)


def build_vocabulary(table: DatasetTable, min_freq: int = 1, fallback: bool = True) -> Vocabulary:
    sm, tx = token_views(table, fallback)
    return Vocabulary.build(sm + tx, min_freq)


# -- pretraining -------------------------------------------------------------

@dataclass
class PretrainRun:
    model: GraphPretrainModel | TextPretrainModel
    result: PretrainResult
    retrieval: float
    checkpoint: Checkpoint
    vocab: Vocabulary | None = None


def _resume(model, optimizer: Adam, path: str | None, cfg: RunConfig, force: bool) -> None:
    if not path:
        return
    ckpt = load_checkpoint(path, expected_hash=cfg.hash, allow_hash_mismatch=force)
    apply_checkpoint(model, ckpt)
    if ckpt.optimizer is not None:
        restore_optimizer(optimizer, model, ckpt)


def run_pretrain_graph(cfg: RunConfig, seed: int, logger: Logger = None, table: DatasetTable | None = None,
                       resume: str | None = None, force: bool = False) -> PretrainRun:
    table = table if table is not None else load_pretrain_table(cfg)
    graphs = [featurize(m) for m in table.molecules]
    pcfg = cfg.pretrain_config(seed)
    model = GraphPretrainModel(GraphEncoder(cfg.graph_config(), make_rng(seed, "graph", "init")), pcfg.projection_dim,
                               make_rng(seed, "graph", "heads"))
    opt = Adam(model.parameters(), lr=pcfg.lr)
    _resume(model, opt, resume, cfg, force)
    result = pretrain_graph(graphs, model, pcfg, logger, opt)
    acc = graph_retrieval(graphs, model)
    _say(logger, f"pretrain-graph retrieval_accuracy={acc:.4f}")
    meta = {"kind": "pretrain-graph", "config": cfg.resolved(), "seed": seed, "retrieval": acc}
    return PretrainRun(model, result, acc, checkpoint_from_model(model, cfg.hash, opt, meta))


def run_pretrain_text(cfg: RunConfig, seed: int, logger: Logger = None, table: DatasetTable | None = None,
                      resume: str | None = None, force: bool = False) -> PretrainRun:
    table = table if table is not None else load_pretrain_table(cfg)
    fallback = cfg["finetune"]["text_fallback"]
    vocab = build_vocabulary(table, cfg["pretrain"]["min_freq"], fallback)
    if resume:
        stored = load_checkpoint(resume, expected_hash=cfg.hash, allow_hash_mismatch=force).metadata.get("vocab")
        vocab = Vocabulary(stored) if stored else vocab
    max_len = cfg["model"]["max_len"]
    sm, tx = token_views(table, fallback)
    smiles_ids = [vocab.encode(s, max_len) for s in sm]
    text_ids = [vocab.encode(t, max_len) for t in tx]
    pcfg = cfg.pretrain_config(seed)
    towers = TextTowers(cfg.text_config(), len(vocab), make_rng(seed, "text", "init"))
    model = TextPretrainModel(towers, pcfg.projection_dim, make_rng(seed, "text", "heads"))
    opt = Adam(model.parameters(), lr=pcfg.lr)
    _resume(model, opt, resume, cfg, force)
    result = pretrain_text(smiles_ids, text_ids, model, pcfg, logger, opt)
    acc = text_retrieval(smiles_ids, text_ids, model)
    _say(logger, f"pretrain-text retrieval_accuracy={acc:.4f}")
    meta = {"kind": "pretrain-text", "config": cfg.resolved(), "seed": seed, "retrieval": acc, "vocab": vocab.tokens}
    return PretrainRun(model, result, acc, checkpoint_from_model(model, cfg.hash, opt, meta), vocab)


# -- fine-tuning -------------------------------------------------------------

@dataclass
class FinetuneRun:
    seed: int
    model: FusionModel
    inputs: MolecularInputs
    result: FinetuneResult
    report: MetricReport
    vocab: Vocabulary | None
    checkpoint: Checkpoint


def fingerprints_for(cfg: RunConfig, table: DatasetTable) -> np.ndarray:
    return fingerprint_block(table.ids, table.molecules, cfg.fingerprint_sources())


def _pretrained(cfg: RunConfig, which: str) -> Checkpoint:
    path = cfg["finetune"][f"{which}_checkpoint"]
    ckpt = load_checkpoint(path)
    kind = ckpt.metadata.get("kind")
    if kind != f"pretrain-{which}":
        raise CheckpointError(f"{path}: expected a pretrain-{which} checkpoint, found {kind!r}")
    return ckpt


def build_model(cfg: RunConfig, task: TaskSpec, vocab_size: int, fp_bits: int, seed: int) -> FusionModel:
    fcfg = cfg.fusion_config()
    return FusionModel(
        fcfg, task, make_rng(seed, "fusion", "init"), cfg.graph_config(), cfg.text_config(), vocab_size, fp_bits
    )


def run_finetune(cfg: RunConfig, logger: Logger = None, table: DatasetTable | None = None,
                 seeds: tuple[int, ...] | None = None, dataset_name: str | None = None) -> list[FinetuneRun]:
    table = table if table is not None else load_task_table(cfg)
    name = dataset_name or _dataset_name(cfg["data"]["dataset"])
    task = infer_task(cfg, table)
    fcfg = cfg.fusion_config()
    mods = fcfg.modalities
    text_ckpt = _pretrained(cfg, "text") if "text" in fcfg.pretrained_init and "T" in mods else None
    graph_ckpt = _pretrained(cfg, "graph") if "graph" in fcfg.pretrained_init and "G" in mods else None
    vocab = None
    if "T" in mods:
        vocab = Vocabulary(text_ckpt.metadata["vocab"]) if text_ckpt else build_vocabulary(
            table, cfg["pretrain"]["min_freq"], cfg["finetune"]["text_fallback"])
    fp = fingerprints_for(cfg, table) if "F" in mods else None
    inputs = prepare_inputs(table, mods, vocab, fp, cfg["model"]["max_len"], cfg["finetune"]["text_fallback"])
    runs = []
    for seed in seeds if seeds is not None else cfg["data"]["seeds"]:
        model = build_model(cfg, task, len(vocab) if vocab else 0, fp.shape[1] if fp is not None else 0, seed)
        if graph_ckpt is not None:
            apply_checkpoint(model, graph_ckpt, ("graph.",))
        if text_ckpt is not None:
            apply_checkpoint(model, text_ckpt, ("text.",))
        split = make_split(table, cfg.split_spec(seed))
        _say(logger, f"finetune seed={seed} modalities={'+'.join(mods)} train={len(split.train)} "
                     f"valid={len(split.valid)} test={len(split.test)}")
        result = finetune(model, inputs, split, cfg.finetune_config(seed), logger)
        m = result.metrics
        report = MetricReport(
            name, seed, cfg.hash, task.metric,
            {k: v.value for k, v in m.items()}, {k: v.per_task for k, v in m.items()}, result.best_epoch,
        )
        _say(logger, f"finetune seed={seed} best_epoch={result.best_epoch} test_{task.metric}={m['test'].value}")
        meta = model_metadata(cfg, model, vocab, fp.shape[1] if fp is not None else 0, seed, table)
        runs.append(FinetuneRun(seed, model, inputs, result, report, vocab, checkpoint_from_model(model, cfg.hash, None, meta)))
    return runs


def model_metadata(cfg: RunConfig, model: FusionModel, vocab: Vocabulary | None, fp_bits: int, seed: int,
                   table: DatasetTable) -> dict:
    return {
        "kind": "finetune",
        "config": cfg.resolved(),
        "seed": seed,
        "task": {"kind": model.task.kind, "n_tasks": model.task.n_tasks, "names": table.task_names},
        "vocab": vocab.tokens if vocab else None,
        "fp_bits": fp_bits,
        "target_mean": [float(x) for x in model.target_mean],
        "target_std": [float(x) for x in model.target_std],
    }


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[FusionModel, RunConfig, Vocabulary | None]:
    meta = ckpt.metadata
    if meta.get("kind") != "finetune":
        raise CheckpointError(f"expected a fine-tuned checkpoint, found {meta.get('kind')!r}")
    values = default_values()
    for section, kv in meta["config"].items():
        for k, v in kv.items():
            values[section][k] = tuple(v) if isinstance(v, list) else v
    cfg = RunConfig(values)
    vocab = Vocabulary(meta["vocab"]) if meta.get("vocab") else None
    task = TaskSpec(meta["task"]["kind"], meta["task"]["n_tasks"])
    model = build_model(cfg, task, len(vocab) if vocab else 0, meta["fp_bits"], meta["seed"])
    apply_checkpoint(model, ckpt)
    model.target_mean = np.array(meta["target_mean"], dtype=np.float64)
    model.target_std = np.array(meta["target_std"], dtype=np.float64)
    return model, cfg, vocab


def inputs_for_checkpoint(cfg: RunConfig, model: FusionModel, vocab: Vocabulary | None, table: DatasetTable,
                          fp_bits: int) -> MolecularInputs:
    mods = model.cfg.modalities
    fp = fingerprints_for(cfg, table) if "F" in mods else None
    if fp is not None and fp.shape[1] != fp_bits:
        raise DataError(f"fingerprint width {fp.shape[1]} differs from the trained width {fp_bits}")
    if table.n_tasks != model.task.n_tasks:
        raise DataError(f"dataset has {table.n_tasks} tasks, checkpoint expects {model.task.n_tasks}")
    return prepare_inputs(table, mods, vocab, fp, cfg["model"]["max_len"], cfg["finetune"]["text_fallback"])



def evaluate_checkpoint(cfg: RunConfig, model: FusionModel, inputs: MolecularInputs, table: DatasetTable, seed: int,
                        dataset_name: str) -> MetricReport:
    split = make_split(table, cfg.split_spec(seed))
    m = {name: evaluate_split(model, inputs, idx) for name, idx in split.as_dict().items()}
    return MetricReport(_dataset_name(dataset_name), seed, cfg.hash, model.task.metric,
                        {k: v.value for k, v in m.items()}, {k: v.per_task for k, v in m.items()})
