from __future__ import annotations

import csv
import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from lgmcl.data import bundled_path
from lgmcl.encoders.graph import GraphEncoderConfig
from lgmcl.encoders.text import TextEncoderConfig

DATA = Path(__file__).parent / "data"


@lru_cache(maxsize=None)
def corpus_smiles() -> tuple[str, ...]:
    """Every SMILES in the bundled datasets, in file order."""
    out = []
    for name in ("zinc_micro", "bace", "esol"):
        with open(bundled_path(name), newline="") as fh:
            out += [row["smiles"] for row in csv.DictReader(fh)]
    return tuple(out)


def tiny_graph_cfg(**kw) -> GraphEncoderConfig:
    base = dict(hidden_dim=8, local_layers=2, global_layers=2, heads=2)
    base.update(kw)
    return GraphEncoderConfig(**base)


def tiny_text_cfg(**kw) -> TextEncoderConfig:
    base = dict(layers=1, hidden_dim=8, heads=2, max_relative=4, max_len=32)
    base.update(kw)
    return TextEncoderConfig(**base)


@pytest.fixture
def report(capsys):
    """Print a PASS/FAIL line past pytest's capture, then assert."""

    def _report(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            sys.stdout.write(f"\n{'PASS' if ok else 'FAIL'} {criterion}: {detail}\n")
            sys.stdout.flush()
        assert ok, f"{criterion}: {detail}"

    return _report


@lru_cache(maxsize=None)
def bace_table():
    from lgmcl.data import load_dataset

    return load_dataset(bundled_path("bace"))


def multimodal(table, modalities="T+F+G", d=8, fp_bits=32, seed=0, task=None, **fusion_kw):
    """Tiny fusion model plus prepared inputs for ``table``."""
    from lgmcl.autodiff import make_rng
    from lgmcl.encoders.text import Vocabulary
    from lgmcl.fingerprints import circular_fingerprint
    from lgmcl.fusion import FusionConfig, FusionModel, TaskSpec, prepare_inputs, token_views

    sm, tx = token_views(table)
    vocab = Vocabulary.build(sm + tx)
    fps = np.stack([circular_fingerprint(m, 2, fp_bits) for m in table.molecules])
    cfg = FusionConfig(modalities=modalities, heads=2, **fusion_kw)
    task = task or TaskSpec("classification", table.n_tasks)
    model = FusionModel(cfg, task, make_rng(seed, "test-fusion"), tiny_graph_cfg(hidden_dim=d),
                        tiny_text_cfg(hidden_dim=d, max_len=128), len(vocab), fp_bits)
    inputs = prepare_inputs(table, cfg.modalities, vocab, fps, max_len=128)
    return model, inputs


def table_of(smiles, labels):
    """In-memory single-task table."""
    from lgmcl.chem import parse_smiles
    from lgmcl.data import DatasetTable

    y = np.asarray(labels, dtype=np.float64).reshape(len(smiles), -1)
    return DatasetTable([str(i) for i in range(len(smiles))], list(smiles), [parse_smiles(s) for s in smiles],
                        [f"y{t}" for t in range(y.shape[1])], y, np.ones_like(y, dtype=bool))
