from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import corpus_smiles, tiny_graph_cfg
from lgmcl.autodiff import Tensor, check_module, make_rng, ops
from lgmcl.chem import parse_smiles, prepare
from lgmcl.encoders.graph import (
    GraphBatch,
    GraphEncoder,
    GraphEncoderConfig,
    attentivefp_forward,
    embed_graph_inputs,
    graph_transformer_forward,
    readout_sum,
)
from lgmcl.errors import ConfigError, ShapeError
from lgmcl.featurizer import FeaturizedGraph, featurize


def encoder(seed=0, **kw) -> GraphEncoder:
    return GraphEncoder(tiny_graph_cfg(**kw), make_rng(seed, "test-graph"))


def graph(smi: str) -> FeaturizedGraph:
    return featurize(parse_smiles(smi))


def union(a: FeaturizedGraph, b: FeaturizedGraph) -> FeaturizedGraph:
    """Disconnected two-component graph built from two featurized molecules."""
    n = a.n_atoms
    adj = np.zeros((n + b.n_atoms,) * 2)
    adj[:n, :n], adj[n:, n:] = a.adjacency, b.adjacency
    return FeaturizedGraph(
        np.vstack([a.atom_features, b.atom_features]),
        np.vstack([a.bond_features, b.bond_features]),
        adj,
        a.incidence + [[(j + n, k + a.n_bonds) for j, k in nb] for nb in b.incidence],
        np.vstack([a.bond_atoms, b.bond_atoms + n]),
    )


class TestConfig:
    def test_defaults(self):
        c = GraphEncoderConfig()
        assert (c.hidden_dim, c.local_layers, c.global_layers, c.heads, c.adjacency_gate) == (128, 2, 2, 4, "soft_blend")

    @pytest.mark.parametrize("kw", [{"hidden_dim": 10, "heads": 4}, {"adjacency_gate": "nope"}, {"gate_init": -1.0}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            GraphEncoderConfig(**kw)


class TestEmbedding:
    def test_shape(self):
        enc = encoder()
        assert embed_graph_inputs(graph("CCO"), enc.embed).shape == (3, 8)

    def test_isolated_atom_bond_block(self):
        g = graph("C")
        np.testing.assert_array_equal(g.node_inputs()[:, 57:], 0.0)

    def test_equivariance(self):
        enc = encoder()
        mol = parse_smiles("CC(=O)Nc1ccccc1")
        order = list(np.random.default_rng(0).permutation(mol.n_atoms))
        a = embed_graph_inputs(featurize(mol), enc.embed).data
        b = embed_graph_inputs(featurize(prepare(mol.permute(order))), enc.embed).data
        np.testing.assert_allclose(b, a[order], atol=1e-12)


class TestAttentiveFP:
    def test_isolated_atom_gru_of_zero(self):
        enc = encoder(local_layers=1)
        g = graph("C")
        m = embed_graph_inputs(g, enc.embed)
        per_atom, _ = attentivefp_forward(m, g, enc.local)
        expected = enc.local.layers[0].gru(Tensor(np.zeros((1, 8))), m).data
        np.testing.assert_allclose(per_atom.data, expected, atol=1e-15)

    def test_attention_rows(self):
        enc = encoder()
        g = graph("CC(C)C(=O)O")
        attentivefp_forward(embed_graph_inputs(g, enc.embed), g, enc.local)
        att = enc.local.layers[-1].last_attention
        np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-12)
        assert (att[g.adjacency == 0] == 0).all()

    @pytest.mark.parametrize("layers", [1, 2, 3])
    def test_receptive_field(self, layers):
        enc = encoder(local_layers=layers)
        g = graph("CCCCCCC")
        batch = GraphBatch.from_graphs([g])
        base = enc(batch).per_atom_local.data[0]
        bumped = GraphBatch(batch.x.copy(), batch.mask, batch.adj)
        bumped.x[0, layers + 1] += 0.7  # just outside the receptive field of atom 0
        moved = enc(bumped).per_atom_local.data[0]
        assert np.abs(moved[0] - base[0]).max() <= 1e-12
        bumped.x[0, layers] += 0.7  # exactly `layers` hops away
        assert np.abs(enc(bumped).per_atom_local.data[0][0] - base[0]).max() > 1e-8


class TestGraphTransformer:
    @pytest.mark.parametrize("gate", ["soft_blend", "hard_mask"])
    def test_rows_stochastic(self, gate):
        enc = encoder(adjacency_gate=gate)
        batch = GraphBatch.from_graphs([graph("CCO"), graph("c1ccccc1N")])
        enc(batch)
        att = enc.globl.layers[-1].last_attention
        rows = att.sum(axis=-1)
        np.testing.assert_allclose(rows[np.broadcast_to(batch.mask[:, None, :], rows.shape)], 1.0, atol=1e-12)
        assert (att[np.broadcast_to(~batch.mask[:, None, None, :], att.shape)] == 0).all()

    def test_hard_mask_components(self):
        enc = encoder(adjacency_gate="hard_mask")
        a, b = graph("CC(=O)O"), graph("c1ccncc1")
        batch = GraphBatch.from_graphs([union(a, b)])
        base = enc(batch).per_atom_global.data[0]
        bumped = GraphBatch(batch.x.copy(), batch.mask, batch.adj)
        bumped.x[0, a.n_atoms:] += np.random.default_rng(0).normal(size=bumped.x[0, a.n_atoms:].shape)
        moved = enc(bumped).per_atom_global.data[0]
        assert np.abs(moved[: a.n_atoms] - base[: a.n_atoms]).max() <= 1e-12
        assert np.abs(moved[a.n_atoms:] - base[a.n_atoms:]).max() > 1e-6

    def test_soft_blend_gamma_zero_is_plain_attention(self):
        enc = encoder(adjacency_gate="soft_blend", gate_init=0.0, global_layers=1)
        layer = enc.globl.layers[0]
        g = graph("CC(N)C=O")
        x = embed_graph_inputs(g, enc.embed)
        out = layer(x, np.ones(g.n_atoms, dtype=bool), g.adjacency).data
        # ungated reference written directly in numpy
        xd, d, h = x.data, 8, 2
        q, k, v = (xd @ lin.weight.data + lin.bias.data for lin in (layer.q, layer.k, layer.v))
        heads = []
        for i in range(h):
            sl = slice(i * d // h, (i + 1) * d // h)
            s = q[:, sl] @ k[:, sl].T / np.sqrt(d // h)
            p = np.exp(s - s.max(axis=1, keepdims=True))
            heads.append((p / p.sum(axis=1, keepdims=True)) @ v[:, sl])
        att = np.hstack(heads) @ layer.out.weight.data + layer.out.bias.data

        def ln(z, norm):
            mu, var = z.mean(-1, keepdims=True), z.var(-1, keepdims=True)
            return (z - mu) / np.sqrt(var + 1e-5) * norm.gamma.data + norm.beta.data

        y = ln(xd + att, layer.norm1)
        ff = layer.ff
        hid = y @ ff.fc1.weight.data + ff.fc1.bias.data
        hid = np.where(hid > 0, hid, np.expm1(np.minimum(hid, 0)))
        ref = ln(y + hid @ ff.fc2.weight.data + ff.fc2.bias.data, layer.norm2)
        np.testing.assert_allclose(out, ref, atol=1e-12)


class TestReadout:
    def test_single_atom(self):
        row = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(readout_sum(Tensor(row)).data, row[0])

    def test_permutation(self):
        x = np.random.default_rng(0).normal(size=(6, 4))
        np.testing.assert_allclose(readout_sum(Tensor(x[::-1])).data, readout_sum(Tensor(x)).data, atol=1e-14)

    def test_batched_equals_separate(self):
        enc = encoder()
        ga, gb = graph("CCO"), graph("c1ccccc1C(=O)O")
        both = enc(GraphBatch.from_graphs([ga, gb]))
        for i, g in enumerate((ga, gb)):
            alone = enc(GraphBatch.from_graphs([g]))
            np.testing.assert_allclose(both.z_local.data[i], alone.z_local.data[0], atol=1e-12)
            np.testing.assert_allclose(both.z_global.data[i], alone.z_global.data[0], atol=1e-12)

    def test_empty(self):
        with pytest.raises(ShapeError):
            readout_sum(Tensor(np.zeros((0, 3))))


class TestInvariance:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 999), st.randoms(use_true_random=False), st.sampled_from(["soft_blend", "hard_mask"]))
    def test_permutation(self, k, rnd, gate):
        enc = encoder(adjacency_gate=gate)
        mol = parse_smiles(corpus_smiles()[k])
        order = list(range(mol.n_atoms))
        rnd.shuffle(order)
        a = enc(GraphBatch.from_graphs([featurize(mol)]))
        b = enc(GraphBatch.from_graphs([featurize(prepare(mol.permute(order)))]))
        np.testing.assert_allclose(b.z_local.data, a.z_local.data, atol=1e-10)
        np.testing.assert_allclose(b.z_global.data, a.z_global.data, atol=1e-10)
        np.testing.assert_allclose(b.per_atom_local.data[0], a.per_atom_local.data[0][order], atol=1e-10)
        np.testing.assert_allclose(b.per_atom_global.data[0], a.per_atom_global.data[0][order], atol=1e-10)


def weighted_loss(out: Tensor, seed: int) -> Tensor:
    return ops.tsum(out * np.random.default_rng(seed).normal(size=out.shape))


class TestGradients:
    SMILES = "CC(N)C=O"  # five heavy atoms

    def test_attentivefp(self):
        enc = encoder(local_layers=2)
        g = graph(self.SMILES)
        assert g.n_atoms == 5
        batch = GraphBatch.from_graphs([g])
        err = check_module(lambda: weighted_loss(attentivefp_forward(enc.embed(batch.x), batch, enc.local)[1], 1),
                           _Params(enc.embed, enc.local))
        assert err <= 1e-4

    @pytest.mark.parametrize("gate", ["soft_blend", "hard_mask"])
    def test_graph_transformer(self, gate):
        enc = encoder(adjacency_gate=gate)
        batch = GraphBatch.from_graphs([graph(self.SMILES)])
        err = check_module(lambda: weighted_loss(graph_transformer_forward(enc.embed(batch.x), batch, enc.globl)[1], 2),
                           _Params(enc.embed, enc.globl))
        assert err <= 1e-4


class _Params:
    def __init__(self, *modules) -> None:
        self.modules = modules

    def parameters(self):
        return [p for m in self.modules for p in m.parameters()]
