"""Occlusion-based modality attribution and embedding export."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff.tensor import Tensor
from .contrastive import minibatches
from .errors import ConfigError
from .fusion import MODALITIES, FusionModel, MolecularInputs

EMBEDDING_KINDS = {"fused": None, "graph": "G", "text": "T", "fingerprint": "F"}


def modality_attribution(
    model: FusionModel, inputs: MolecularInputs, idx: Sequence[int] | None = None, batch_size: int = 128
) -> dict[str, float]:
    """Share of mean |change in predicted score| when each modality embedding is zeroed."""
    active = model.cfg.modalities
    if len(active) < 2:
        raise ConfigError("attribution needs at least two active modalities; nothing to occlude")
    idx = np.arange(len(inputs)) if idx is None else np.asarray(idx, dtype=np.int64)
    totals = dict.fromkeys(MODALITIES, 0.0)
    count = 0
    for chunk in minibatches(len(idx), batch_size, None):
        embs = model.embeddings(inputs.batch(idx[chunk]))
        base = model.scores(model.head(model.fuse(embs)).data)
        for m in active:
            occluded = dict(embs)
            occluded[m] = Tensor(np.zeros_like(embs[m].data))
            out = model.scores(model.head(model.fuse(occluded)).data)
            totals[m] += float(np.abs(out - base).sum())
        count += base.size
    deltas = {m: totals[m] / max(count, 1) for m in MODALITIES}
    norm = sum(deltas.values())
    if norm == 0:
        return {m: (1.0 / len(active) if m in active else 0.0) for m in MODALITIES}
    return {m: deltas[m] / norm for m in MODALITIES}


def embedding_matrix(model: FusionModel, inputs: MolecularInputs, which: str, batch_size: int = 128) -> np.ndarray:
    if which not in EMBEDDING_KINDS:
        raise ConfigError(f"unknown embedding kind {which!r}; use one of {sorted(EMBEDDING_KINDS)}")
    modality = EMBEDDING_KINDS[which]
    if modality is not None and modality not in model.cfg.modalities:
        raise ConfigError(f"model has no {which} modality")
    rows = []
    for chunk in minibatches(len(inputs), batch_size, None):
        embs = model.embeddings(inputs.batch(chunk))
        rows.append((model.fuse(embs) if modality is None else embs[modality]).data)
    return np.concatenate(rows, axis=0)


def export_embeddings(
    model: FusionModel, inputs: MolecularInputs, ids: Sequence[str], which: str, path: str | Path
) -> np.ndarray:
    """CSV ``id,v_0..v_{d-1}`` in dataset order."""
    mat = embedding_matrix(model, inputs, which)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"v_{j}" for j in range(mat.shape[1])])
        for ident, row in zip(ids, mat):
            w.writerow([ident] + [repr(float(x)) for x in row])
    return mat
