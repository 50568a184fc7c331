from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import corpus_smiles
from lgmcl.chem import parse_smiles, prepare
from lgmcl.featurizer import (
    ATOM_DIM,
    ATOM_SLICES,
    BOND_DIM,
    BOND_SLICES,
    TEMPLATE_PATTERN,
    atom_features,
    bond_features,
    compute_descriptors,
    featurize,
    generate_template_text,
)

EXACT_ATOM = ("symbol", "degree", "hydrogens", "chirality")
EXACT_BOND = ("stereo",)
ONE_HOT_ATOM = ("symbol", "degree", "hybridization", "hydrogens", "chirality", "implicit_valence")


def check_blocks(g) -> None:
    for block in EXACT_ATOM:
        np.testing.assert_array_equal(g.atom_features[:, ATOM_SLICES[block]].sum(axis=1), 1.0)
    for block in ONE_HOT_ATOM:
        assert (g.atom_features[:, ATOM_SLICES[block]].sum(axis=1) <= 1.0).all()
    if g.n_bonds:
        for block in EXACT_BOND:
            np.testing.assert_array_equal(g.bond_features[:, BOND_SLICES[block]].sum(axis=1), 1.0)


class TestDimensions:
    def test_totals(self):
        assert (ATOM_DIM, BOND_DIM) == (57, 15)

    def test_ethanol_shapes(self):
        g = featurize(parse_smiles("CCO"))
        assert g.atom_features.shape == (3, 57)
        assert g.bond_features.shape == (2, 15)
        assert g.adjacency.sum() == 4

    def test_naphthalene_symmetric(self):
        g = featurize(parse_smiles("c1ccc2ccccc2c1"))
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, len(corpus_smiles()) - 1))
    def test_blocks_hold(self, k):
        check_blocks(featurize(parse_smiles(corpus_smiles()[k])))


class TestAtomRules:
    def test_ethanol_oxygen(self):
        mol = parse_smiles("CCO")
        v = atom_features(mol, 2)
        assert v[ATOM_SLICES["degree"]].argmax() == 1
        assert v[ATOM_SLICES["hydrogens"]].argmax() == 1
        assert v[ATOM_SLICES["h_donor"]][0] == 1 and v[ATOM_SLICES["h_acceptor"]][0] == 1

    def test_methane(self):
        v = atom_features(parse_smiles("C"), 0)
        assert v[ATOM_SLICES["degree"]].argmax() == 0
        assert v[ATOM_SLICES["hydrogens"]].argmax() == 4
        assert v[ATOM_SLICES["aromatic"]][0] == 0

    def test_index_error(self):
        with pytest.raises(IndexError):
            atom_features(parse_smiles("C"), 3)


class TestBondRules:
    def test_benzene_bond(self):
        mol = parse_smiles("c1ccccc1")
        for b in range(mol.n_bonds):
            v = bond_features(mol, b)
            np.testing.assert_array_equal(v[BOND_SLICES["bond_type"]], [1, 0, 0, 0, 1])
            assert v[BOND_SLICES["in_ring"]][0] == 1
            assert v[BOND_SLICES["conjugated"]][0] == 1

    def test_ethane_bond(self):
        v = bond_features(parse_smiles("CC"), 0)
        assert v[BOND_SLICES["bond_type"]][1] == 1
        assert v[BOND_SLICES["in_ring"]][0] == 0
        assert v[BOND_SLICES["conjugated"]][0] == 0
        assert v[BOND_SLICES["stereo"]].argmax() == 0


class TestPermutation:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, len(corpus_smiles()) - 1), st.randoms(use_true_random=False))
    def test_rows_follow_reindexing(self, k, rnd):
        mol = parse_smiles(corpus_smiles()[k])
        order = list(range(mol.n_atoms))
        rnd.shuffle(order)
        g, gp = featurize(mol), featurize(prepare(mol.permute(order)))
        np.testing.assert_array_equal(gp.atom_features, g.atom_features[order])
        np.testing.assert_array_equal(gp.adjacency, g.adjacency[np.ix_(order, order)])
        np.testing.assert_allclose(gp.node_inputs(), g.node_inputs()[order])


class TestDescriptors:
    def test_methane_weight(self):
        assert compute_descriptors(parse_smiles("C")).molecular_weight == pytest.approx(16.04, abs=0.01)

    def test_benzene(self):
        d = compute_descriptors(parse_smiles("c1ccccc1"))
        assert d.aromatic_ring_count == 1 and d.hbd_count == 0

    def test_water(self):
        d = compute_descriptors(parse_smiles("O"))
        assert d.hbd_count == 1 and d.hba_count == 1


class TestTemplateText:
    def test_deterministic(self):
        mol = parse_smiles("CC(=O)Oc1ccccc1C(=O)O")
        assert generate_template_text(mol) == generate_template_text(parse_smiles("CC(=O)Oc1ccccc1C(=O)O"))

    def test_ethanol_donor(self):
        assert "hydrogen bond donor" in generate_template_text(parse_smiles("CCO"))

    def test_benzene_aromatic(self):
        text = generate_template_text(parse_smiles("c1ccccc1"))
        assert "aromatic" in text and "with 1 ring" in text

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, len(corpus_smiles()) - 1))
    def test_grammar(self, k):
        assert TEMPLATE_PATTERN.match(generate_template_text(parse_smiles(corpus_smiles()[k])))
