from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_text_cfg
from lgmcl.autodiff import Parameter, Tensor, check_gradients, make_rng, ops
from lgmcl.encoders.text import (
    PAD_ID,
    SPECIALS,
    TextBatch,
    TextEncoder,
    TextTowers,
    Vocabulary,
    disentangled_attention,
    encode_text,
    relative_positions,
    smiles_tokenize,
    text_tokenize,
)
from lgmcl.errors import ConfigError, ShapeError


def text_encoder(seed=0, vocab=20, **kw) -> TextEncoder:
    return TextEncoder(tiny_text_cfg(**kw), vocab, make_rng(seed, "test-text"))


class TestTokenizers:
    def test_smiles(self):
        assert smiles_tokenize("CCO") == ["C", "C", "O"]
        assert smiles_tokenize("CCl") == ["C", "Cl"]
        assert smiles_tokenize("[NH4+]") == ["[NH4+]"]
        assert smiles_tokenize("c1ccccc1Br") == ["c", "1", "c", "c", "c", "c", "c", "1", "Br"]

    def test_text(self):
        assert text_tokenize("Aromatic ring.") == ["aromatic", "ring", "."]
        assert text_tokenize("") == []
        assert text_tokenize("weight 46.07 daltons") == ["weight", "46.07", "daltons"]

    @settings(max_examples=100, deadline=None)
    @given(st.text(alphabet=st.characters(codec="ascii"), max_size=60))
    def test_idempotent(self, s):
        once = text_tokenize(s)
        assert text_tokenize(" ".join(once)) == once


class TestVocabulary:
    def test_build_and_encode(self):
        vocab = Vocabulary.build([["c", "c", "o"], ["c", "n"]])
        assert vocab.tokens[: len(SPECIALS)] == list(SPECIALS)
        assert vocab.tokens[len(SPECIALS)] == "c"
        assert vocab.encode(["c", "zz"])[1] == vocab.index["<unk>"]

    def test_round_trip(self, tmp_path):
        vocab = Vocabulary.build([["a", "b"], ["b"]])
        vocab.save(tmp_path / "vocab.txt")
        assert Vocabulary.load(tmp_path / "vocab.txt").tokens == vocab.tokens

    def test_truncation(self):
        vocab = Vocabulary.build([["a"]])
        assert len(vocab.encode(["a"] * 300, max_len=256)) == 256


class TestRelativePositions:
    def test_diagonal(self):
        delta = relative_positions(10, 4)
        np.testing.assert_array_equal(np.diag(delta), 4)
        assert delta.min() == 0 and delta.max() == 7


def brute_scores(layer, h, pos, head):
    """Three-term score for every (i, j) pair with explicit loops."""
    n, d = h.shape
    dh = d // layer.heads
    sl = slice(head * dh, (head + 1) * dh)
    qc = (h @ layer.q.weight.data + layer.q.bias.data)[:, sl]
    kc = (h @ layer.kc.weight.data + layer.kc.bias.data)[:, sl]
    qr = (pos @ layer.q_pos.weight.data)[:, sl]
    kr = (pos @ layer.k_pos.weight.data)[:, sl]
    k = layer.k
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            dij = min(max(i - j + k, 0), 2 * k - 1)
            dji = min(max(j - i + k, 0), 2 * k - 1)
            out[i, j] = qc[i] @ kc[j] + qc[i] @ kr[dij] + kc[j] @ qr[dji]
    return out


class TestDisentangledAttention:
    def test_three_token_oracle(self):
        enc = text_encoder()
        layer = enc.layers[0]
        h = np.random.default_rng(0).normal(size=(3, 8))
        scores = layer.scores(Tensor(h), enc.positions).data
        for head in range(layer.heads):
            np.testing.assert_allclose(scores[head], brute_scores(layer, h, enc.positions.data, head), atol=1e-12)

    def test_zero_position_projections(self):
        enc = text_encoder()
        layer = enc.layers[0]
        layer.q_pos.weight.data[...] = 0.0
        layer.k_pos.weight.data[...] = 0.0
        h = np.random.default_rng(1).normal(size=(5, 8))
        layer.attention(Tensor(h), enc.positions, np.ones(5, dtype=bool))
        dh = 4
        for head in range(2):
            sl = slice(head * dh, (head + 1) * dh)
            q = (h @ layer.q.weight.data + layer.q.bias.data)[:, sl]
            k = (h @ layer.kc.weight.data + layer.kc.bias.data)[:, sl]
            s = q @ k.T / np.sqrt(3 * dh)
            p = np.exp(s - s.max(axis=1, keepdims=True))
            np.testing.assert_allclose(layer.last_attention[head], p / p.sum(axis=1, keepdims=True), atol=1e-14)

    def test_row_stochastic_and_pads(self):
        enc = text_encoder()
        batch = TextBatch.from_ids([[4, 5, 6, 7], [8, 9]])
        enc(batch)
        att = enc.layers[0].last_attention
        np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(att[1, :, :, 2:], 0.0)

    def test_position_table_shape(self):
        enc = text_encoder()
        with pytest.raises(ShapeError):
            disentangled_attention(np.zeros((3, 8)), np.zeros((5, 8)), enc.layers[0])


class TestEncodeText:
    def test_shape_any_length(self):
        enc = text_encoder()
        for n in (1, 3, 17):
            assert encode_text([4 + i % 16 for i in range(n)], enc).shape == (8,)

    def test_pad_invariance(self):
        enc = text_encoder(layers=2)
        ids = [[5, 6, 7, 8], [9, 10]]
        tight = enc(TextBatch.from_ids(ids)).data
        padded = enc(TextBatch.from_ids(ids, pad_to=20)).data
        np.testing.assert_allclose(padded, tight, atol=1e-12)

    def test_single_token(self):
        enc = text_encoder()
        batch = TextBatch.from_ids([[7]])
        np.testing.assert_allclose(enc(batch).data[0], enc.states(batch).data[0, 0], atol=1e-15)

    def test_too_long(self):
        enc = text_encoder(max_len=4)
        with pytest.raises(ShapeError):
            enc(TextBatch.from_ids([[5] * 6]))

    def test_empty(self):
        with pytest.raises(ValueError):
            TextBatch.from_ids([[]])

    def test_pad_id(self):
        assert TextBatch.from_ids([[4, 5], [6]]).ids[1, 1] == PAD_ID

    def test_gradients_four_tokens(self):
        enc = text_encoder(layers=2)
        batch = TextBatch.from_ids([[4, 9, 5, 12]])
        w = np.random.default_rng(3).normal(size=(1, 8))
        assert check_gradients(lambda: ops.tsum(enc(batch) * w), enc.parameters()) <= 1e-4


class TestTowers:
    def test_shared_and_separate(self):
        one = TextTowers(tiny_text_cfg(towers=1), 20, make_rng(0, "t"))
        two = TextTowers(tiny_text_cfg(towers=2), 20, make_rng(0, "t"))
        assert one.description is None and two.description is not None
        assert two.n_parameters() == 2 * one.n_parameters()

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            tiny_text_cfg(towers=3)
        with pytest.raises(ConfigError):
            tiny_text_cfg(hidden_dim=10, heads=4)


def test_parameter_type():
    assert isinstance(text_encoder().positions, Parameter)
