"""One PASS/FAIL line per acceptance criterion; run with ``pytest tests/test_acceptance.py -s``."""

from __future__ import annotations

import csv
import math
import time

import numpy as np
import pytest

from conftest import DATA, corpus_smiles, multimodal, table_of, tiny_graph_cfg, tiny_text_cfg
from lgmcl.autodiff import check_gradients, check_module, make_rng, ops, run_op_suite
from lgmcl.chem import parse_smiles, prepare
from lgmcl.checkpoint import save_checkpoint
from lgmcl.cli import main
from lgmcl.config import load_config
from lgmcl.contrastive import NTXentConfig, nt_xent_loss, nt_xent_reference
from lgmcl.data import Split, load_dataset, resolve_dataset_path
from lgmcl.encoders.graph import GraphBatch, GraphEncoder, attentivefp_forward, graph_transformer_forward
from lgmcl.encoders.text import TextBatch, TextEncoder
from lgmcl.featurizer import ATOM_DIM, ATOM_SLICES, BOND_DIM, BOND_SLICES, featurize
from lgmcl.fusion import finetune, masked_loss, prepare_inputs
from lgmcl.metrics import MetricReport, binary_auc
from lgmcl.pipeline import (
    build_model,
    build_vocabulary,
    fingerprints_for,
    infer_task,
    run_finetune,
    run_pretrain_graph,
    run_pretrain_text,
)

# Desk-scale model used for the training criteria.
DESK = [
    "model.hidden_dim=64", "model.heads=4", "model.text_layers=2", "model.text_heads=4",
    "model.max_relative=32", "model.fusion_heads=4",
]
TINY = [
    "model.hidden_dim=8", "model.heads=2", "model.text_layers=1", "model.text_heads=2",
    "model.max_relative=4", "model.fusion_heads=2", "model.max_len=96", "fingerprints.n_bits=64",
]


class _Params:
    def __init__(self, *modules) -> None:
        self.modules = modules

    def parameters(self):
        return [p for m in self.modules for p in m.parameters()]


def weighted(out, seed):
    return ops.tsum(out * np.random.default_rng(seed).normal(size=out.shape))


def test_c1_golden_parse(report):
    with open(DATA / "golden_smiles.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    start = time.perf_counter()
    wrong = []
    for r in rows:
        mol = parse_smiles(r["smiles"])
        got = (mol.n_atoms, mol.n_bonds, len(mol.rings.rings), sum(mol.total_h(i) for i in range(mol.n_atoms)))
        want = (int(r["atoms"]), int(r["bonds"]), int(r["rings"]), int(r["hydrogens"]))
        if got != want:
            wrong.append(r["name"])
    elapsed = time.perf_counter() - start
    ok = len(rows) == 20 and not wrong and elapsed < 1.0
    report("C1 golden SMILES counts", ok, f"{20 - len(wrong)}/{len(rows)} exact in {elapsed:.3f}s; wrong={wrong}")


EXACT_ATOM = ("symbol", "degree", "hydrogens", "chirality")
AT_MOST_ONE_ATOM = ("hybridization", "implicit_valence")


def test_c2_featurizer(report):
    smiles = corpus_smiles()
    pick = make_rng(0, "acceptance", "featurizer").choice(len(smiles), 1000, replace=False)
    start = time.perf_counter()
    bad = []
    for k in pick:
        g = featurize(parse_smiles(smiles[k]))
        if g.atom_features.shape[1] != 57 or g.bond_features.shape[1] != 15:
            bad.append((k, "dims"))
            continue
        a, b = g.atom_features, g.bond_features
        bad += [(k, blk) for blk in EXACT_ATOM if not (a[:, ATOM_SLICES[blk]].sum(axis=1) == 1).all()]
        bad += [(k, blk) for blk in AT_MOST_ONE_ATOM if not (a[:, ATOM_SLICES[blk]].sum(axis=1) <= 1).all()]
        if not np.isfinite(a).all():
            bad.append((k, "finite"))
        if g.n_bonds:
            kind = b[:, BOND_SLICES["bond_type"]]
            # [exists, single, double, triple, aromatic]
            if not ((kind[:, 0] == 1).all() and (kind[:, 1:].sum(axis=1) == 1).all()):
                bad.append((k, "bond_type"))
            if not (b[:, BOND_SLICES["stereo"]].sum(axis=1) == 1).all():
                bad.append((k, "stereo"))
            if not (b[:, BOND_SLICES["wedge"]].sum(axis=1) <= 1).all():
                bad.append((k, "wedge"))
    elapsed = time.perf_counter() - start
    ok = ATOM_DIM == 57 and BOND_DIM == 15 and not bad and elapsed < 10.0
    report("C2 featurizer dimensions and one-hot blocks", ok, f"1000 molecules, violations={bad[:5]}, {elapsed:.2f}s")


def test_c3_gradients(report):
    start = time.perf_counter()
    errors = {}
    for r in run_op_suite(trials=10, seed=0):
        errors[f"op:{r.name}"] = r.max_rel_error
    five = featurize(parse_smiles("CC(N)C=O"))
    assert five.n_atoms == 5
    batch = GraphBatch.from_graphs([five])
    enc = GraphEncoder(tiny_graph_cfg(), make_rng(0, "acceptance", "graph"))
    errors["attentivefp"] = check_module(
        lambda: weighted(attentivefp_forward(enc.embed(batch.x), batch, enc.local)[1], 1), _Params(enc.embed, enc.local))
    for gate in ("soft_blend", "hard_mask"):
        g_enc = GraphEncoder(tiny_graph_cfg(adjacency_gate=gate), make_rng(0, "acceptance", gate))
        errors[f"graph_transformer:{gate}"] = check_module(
            lambda: weighted(graph_transformer_forward(g_enc.embed(batch.x), batch, g_enc.globl)[1], 2),
            _Params(g_enc.embed, g_enc.globl))
    t_enc = TextEncoder(tiny_text_cfg(layers=2), 20, make_rng(0, "acceptance", "text"))
    tokens = TextBatch.from_ids([[4, 9, 5, 12]])
    errors["text_encoder"] = check_gradients(lambda: weighted(t_enc(tokens), 3), t_enc.parameters())
    table = table_of(["CCO", "c1ccncc1", "CC(=O)N"], [1, 0, 1])
    model, inputs = multimodal(table, d=4, fp_bits=16)
    fb = inputs.batch([0, 1, 2])
    errors["fusion_stack"] = check_module(lambda: masked_loss(model(fb), fb.labels, fb.mask, model.task), model)
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = max(errors.values()) <= 1e-4 and elapsed < 120.0
    report("C3 finite-difference gradients", ok,
           f"{len(errors)} checks, worst {worst}={errors[worst]:.2e} (<=1e-4), {elapsed:.1f}s")


def test_c4_nt_xent(report):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    diffs = []
    for n in (2, 4, 8):
        for sym in (False, True):
            za, zb = rng.normal(size=(n, 16)), rng.normal(size=(n, 16))
            diffs.append(abs(nt_xent_loss(za, zb, NTXentConfig(0.1, sym)).item() - nt_xent_reference(za, zb, 0.1, sym)))
    single = nt_xent_loss(rng.normal(size=(1, 16)), rng.normal(size=(1, 16))).item()
    e = np.eye(4)
    orth = nt_xent_loss(e[:2], e[2:]).item()
    elapsed = time.perf_counter() - start
    ok = max(diffs) <= 1e-10 and single == 0.0 and abs(orth - math.log(3)) <= 1e-9 and elapsed < 5.0
    report("C4 NT-Xent oracle", ok,
           f"max |diff|={max(diffs):.1e}, N=1 loss={single}, orthogonal={orth:.12f} vs log3, {elapsed:.2f}s")


def test_c5_invariances(report):
    start = time.perf_counter()
    smiles = corpus_smiles()
    rng = np.random.default_rng(5)
    enc = GraphEncoder(tiny_graph_cfg(), make_rng(0, "acceptance", "inv"))
    perm_err = 0.0
    for k in rng.choice(len(smiles), 20, replace=False):
        mol = parse_smiles(smiles[k])
        order = list(rng.permutation(mol.n_atoms))
        a = enc(GraphBatch.from_graphs([featurize(mol)]))
        b = enc(GraphBatch.from_graphs([featurize(prepare(mol.permute(order)))]))
        perm_err = max(perm_err, np.abs(a.z_local.data - b.z_local.data).max(), np.abs(a.z_global.data - b.z_global.data).max())

    chain = GraphBatch.from_graphs([featurize(parse_smiles("CCCCCCC"))])
    base = enc(chain).per_atom_local.data[0]
    bumped = GraphBatch(chain.x.copy(), chain.mask, chain.adj)
    bumped.x[0, 3] += 0.7
    locality = float(np.abs(enc(bumped).per_atom_local.data[0][0] - base[0]).max())

    hard = GraphEncoder(tiny_graph_cfg(adjacency_gate="hard_mask"), make_rng(0, "acceptance", "hard"))
    two = GraphBatch.from_graphs([featurize(parse_smiles("CC(=O)O.c1ccncc1", keep_largest=False))])
    ref = hard(two).per_atom_global.data[0]
    moved = GraphBatch(two.x.copy(), two.mask, two.adj)
    moved.x[0, 4:] += rng.normal(size=moved.x[0, 4:].shape)
    component = float(np.abs(hard(moved).per_atom_global.data[0][:4] - ref[:4]).max())

    scores, labels = rng.normal(size=300), rng.integers(0, 2, 300)
    auc = binary_auc(scores, labels)
    auc_same = all(binary_auc(f(scores), labels) == auc for f in (np.exp, lambda s: s**3 + s, lambda s: 2.5 * s - 7.0))
    elapsed = time.perf_counter() - start
    ok = perm_err <= 1e-10 and locality <= 1e-12 and component <= 1e-12 and auc_same and elapsed < 60.0
    report("C5 invariance suite", ok,
           f"readout permutation {perm_err:.1e}, 2-hop locality {locality:.1e}, "
           f"hard-mask components {component:.1e}, AUC transform-invariant={auc_same}, {elapsed:.1f}s")


@pytest.mark.slow
def test_c6_pretraining(report):
    cfg = load_config(overrides=DESK + ["model.hidden_dim=32", "pretrain.epochs=30", "pretrain.limit=256"])
    start = time.perf_counter()
    graph = run_pretrain_graph(cfg, 0)
    text = run_pretrain_text(cfg, 0)
    elapsed = time.perf_counter() - start
    drops = {}
    for name, run in (("graph", graph), ("text", text)):
        first, last = run.result.epoch_loss[0], run.result.epoch_loss[-1]
        drops[name] = 1.0 - last / first
    ok = min(drops.values()) >= 0.5 and min(graph.retrieval, text.retrieval) >= 0.9 and elapsed < 600.0
    report("C6 pretraining sanity", ok,
           f"loss drop graph {drops['graph']:.1%} text {drops['text']:.1%}, retrieval graph {graph.retrieval:.3f} "
           f"text {text.retrieval:.3f}, {elapsed:.0f}s")


@pytest.mark.slow
def test_c7_overfit_subset(report):
    cfg = load_config(overrides=DESK + ["finetune.epochs=50"])
    table = load_dataset(resolve_dataset_path("bundled:bace"))
    sub = table.subset(sorted(make_rng(0, "acceptance", "overfit").choice(len(table), 64, replace=False)))
    start = time.perf_counter()
    vocab = build_vocabulary(sub)
    fp = fingerprints_for(cfg, sub)
    model = build_model(cfg, infer_task(cfg, sub), len(vocab), fp.shape[1], 0)
    inputs = prepare_inputs(sub, ("T", "F", "G"), vocab, fp, cfg["model"]["max_len"])
    everything = np.arange(64)
    res = finetune(model, inputs, Split(everything, everything, everything), cfg.finetune_config(0))
    elapsed = time.perf_counter() - start
    auc = res.metrics["train"].value
    report("C7a overfit 64 molecules (T+F+G)", auc >= 0.99 and elapsed < 1800.0,
           f"train ROC-AUC {auc:.4f} (>=0.99), best epoch {res.best_epoch}, {elapsed:.0f}s")


def _seeded_runs(dataset):
    cfg = load_config(overrides=DESK + [f"data.dataset=bundled:{dataset}", "finetune.modalities=F+G",
                                        "finetune.epochs=30", "data.seeds=0,1,2"])
    start = time.perf_counter()
    runs = run_finetune(cfg)
    return [r.report.values["test"] for r in runs], time.perf_counter() - start


@pytest.mark.slow
def test_c7_bace(report):
    values, elapsed = _seeded_runs("bace")
    mean = float(np.mean(values))
    report("C7b BACE random split (F+G)", mean >= 0.70 and elapsed < 1800.0,
           f"test ROC-AUC per seed {[round(v, 4) for v in values]}, mean {mean:.4f} (>=0.70), {elapsed:.0f}s")


@pytest.mark.slow
def test_c7_esol(report):
    values, elapsed = _seeded_runs("esol")
    mean = float(np.mean(values))
    report("C7c ESOL random split (F+G)", mean <= 1.3 and elapsed < 1800.0,
           f"test RMSE per seed {[round(v, 4) for v in values]}, mean {mean:.4f} (<=1.3), {elapsed:.0f}s")


def test_c8_ablation_surface(report, tmp_path):
    table = load_dataset(resolve_dataset_path("bundled:bace"))
    sub = table.subset(sorted(make_rng(0, "acceptance", "ablation").choice(len(table), 40, replace=False)))
    base = TINY + ["finetune.epochs=1", "data.seeds=0", "pretrain.epochs=1"]
    pre = load_config(overrides=base)
    g_path = save_checkpoint(run_pretrain_graph(pre, 0, table=sub).checkpoint, tmp_path / "graph.ckpt")
    t_path = save_checkpoint(run_pretrain_text(pre, 0, table=sub).checkpoint, tmp_path / "text.ckpt")
    variants = {m: [f"finetune.modalities={m}"] for m in ("T", "F", "G", "T+G", "T+F", "F+G", "T+F+G")}
    variants.update({f"agg:{a}": [f"finetune.aggregation={a}"] for a in ("sum", "concat")})
    variants.update({f"pair:{p}": [f"finetune.pairing={p}"] for p in ("graph_centered", "text_centered")})
    ckpts = [f"finetune.graph_checkpoint={g_path}", f"finetune.text_checkpoint={t_path}"]
    for init in ("graph", "text", "graph,text", "none"):
        variants[f"init:{init}"] = ckpts + [f"finetune.pretrained_init={init}"]
    failures, hashes = [], set()
    for name, extra in variants.items():
        cfg = load_config(overrides=base + extra)
        hashes.add(cfg.hash)
        runs = run_finetune(cfg, table=sub)
        rep = runs[0].report
        if not isinstance(rep, MetricReport) or rep.config_hash != cfg.hash or rep.values.get("test") is None:
            failures.append(name)
    t_model, t_inputs = multimodal(sub, "T")
    embs = t_model.embeddings(t_inputs.batch(range(8)))
    identity = np.array_equal(t_model.fuse(embs).data, embs["T"].data)
    ok = not failures and identity and len(hashes) == len(variants)
    report("C8 ablation surface", ok,
           f"{len(variants) - len(failures)}/{len(variants)} config variants emitted reports, "
           f"fuse(T only)==z_T exactly: {identity}; failures={failures}")


CLI_CONFIG = """\
[model]
hidden_dim = 8
heads = 2
text_layers = 1
text_heads = 2
max_relative = 4
fusion_heads = 2
max_len = 96

[finetune]
epochs = 2

[fingerprints]
n_bits = 64

[data]
dataset = {dataset}
seeds = 0,1
"""


def test_c9_determinism(report, tmp_path):
    table = load_dataset(resolve_dataset_path("bundled:bace"))
    pick = sorted(make_rng(0, "acceptance", "determinism").choice(len(table), 40, replace=False))
    with open(tmp_path / "d.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "smiles", "label"])
        for i in pick:
            w.writerow([table.ids[i], table.smiles[i], int(table.labels[i, 0])])
    (tmp_path / "run.ini").write_text(CLI_CONFIG.format(dataset=tmp_path / "d.csv"))
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = main(["finetune", "--config", str(tmp_path / "run.ini"), "--out", str(out), "--quiet"])
        outs.append((code, (out / "metrics.csv").read_bytes(), (out / "model_seed1.ckpt").read_bytes()))
    same = outs[0] == outs[1] and outs[0][0] == 0
    report("C9 bit-identical re-run", same,
           f"metrics.csv identical={outs[0][1] == outs[1][1]}, checkpoints identical={outs[0][2] == outs[1][2]}")
