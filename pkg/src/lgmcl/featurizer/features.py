"""Atom/bond feature vectors and the chemistry predicates behind them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..chem.molecule import BondOrder, Chirality, Molecule
from ..errors import DataError

ATOM_SYMBOLS = ("B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "As", "Se", "Br", "Te", "I", "At")
HYBRIDIZATIONS = ("sp", "sp2", "sp3", "sp3d", "sp3d2", "other")
RING_SIZES = (3, 4, 5, 6)

# (name, width) in vector order
ATOM_BLOCKS: tuple[tuple[str, int], ...] = (
    ("symbol", 16),
    ("degree", 6),
    ("formal_charge", 1),
    ("radical_electrons", 1),
    ("hybridization", 6),
    ("aromatic", 1),
    ("hydrogens", 5),
    ("chirality", 4),
    ("in_ring", 1),
    ("ring_type", 4),
    ("atomic_mass", 1),
    ("implicit_valence", 7),
    ("h_acceptor", 1),
    ("h_donor", 1),
    ("acidic", 1),
    ("basic", 1),
)
BOND_BLOCKS: tuple[tuple[str, int], ...] = (
    ("bond_type", 5),
    ("conjugated", 1),
    ("wedge", 2),
    ("in_ring", 1),
    ("stereo", 6),
)
ATOM_DIM = sum(w for _, w in ATOM_BLOCKS)
BOND_DIM = sum(w for _, w in BOND_BLOCKS)


def _offsets(blocks: tuple[tuple[str, int], ...]) -> dict[str, slice]:
    out, start = {}, 0
    for name, width in blocks:
        out[name] = slice(start, start + width)
        start += width
    return out


ATOM_SLICES = _offsets(ATOM_BLOCKS)
BOND_SLICES = _offsets(BOND_BLOCKS)

MASS_SCALE = 0.01


# -- predicates --------------------------------------------------------------

def _orders(mol: Molecule, i: int) -> list[BondOrder]:
    return [mol.bonds[b].order for _, b in mol.adjacency[i]]


def hybridization(mol: Molecule, i: int) -> str:
    atom = mol.atoms[i]
    orders = _orders(mol, i)
    if atom.element in ("P", "S"):
        valence = sum(o.valence for o in orders) + mol.total_h(i)
        if round(valence) == 5:
            return "sp3d"
        if round(valence) == 6:
            return "sp3d2"
    n_double = orders.count(BondOrder.DOUBLE)
    if BondOrder.TRIPLE in orders or n_double >= 2:
        return "sp"
    if atom.aromatic or n_double == 1:
        return "sp2"
    if not orders and mol.total_h(i) == 0:
        return "other"
    return "sp3"


def is_donor(mol: Molecule, i: int) -> bool:
    return mol.atoms[i].element in ("N", "O") and mol.total_h(i) >= 1


def is_acceptor(mol: Molecule, i: int) -> bool:
    atom = mol.atoms[i]
    if atom.element not in ("N", "O") or atom.formal_charge > 0:
        return False
    if atom.element == "O":
        return True
    h, heavy = mol.total_h(i), mol.degree(i)
    if atom.aromatic and (h > 0 or heavy >= 3):
        return False  # pyrrole-type nitrogen, lone pair in the ring
    valence = sum(o.valence for o in _orders(mol, i)) + h
    return valence < 4 and heavy + h <= 3


def _has_double_to_oxygen(mol: Molecule, center: int, exclude: int = -1) -> bool:
    for j, b in mol.adjacency[center]:
        if j != exclude and mol.atoms[j].element == "O" and mol.bonds[b].order is BondOrder.DOUBLE:
            return True
    return False


def is_acidic(mol: Molecule, i: int) -> bool:
    """Hydroxyl (or its anion) on a C(=O), S(=O) or P(=O) center."""
    atom = mol.atoms[i]
    if atom.element != "O" or not (mol.total_h(i) >= 1 or atom.formal_charge == -1):
        return False
    for j, b in mol.adjacency[i]:
        if mol.bonds[b].order is BondOrder.SINGLE and mol.atoms[j].element in ("C", "S", "P"):
            if _has_double_to_oxygen(mol, j, exclude=i):
                return True
    return False


def _is_carbonyl_carbon(mol: Molecule, c: int) -> bool:
    if mol.atoms[c].element != "C":
        return False
    return any(
        mol.atoms[j].element in ("O", "S") and mol.bonds[b].order is BondOrder.DOUBLE
        for j, b in mol.adjacency[c]
    )


def _in_amidine(mol: Molecule, i: int) -> bool:
    for c, _ in mol.adjacency[i]:
        if mol.atoms[c].element != "C":
            continue
        n_nbrs = [(j, b) for j, b in mol.adjacency[c] if mol.atoms[j].element == "N" and not mol.atoms[j].aromatic]
        if len(n_nbrs) >= 2 and any(mol.bonds[b].order is BondOrder.DOUBLE for _, b in n_nbrs):
            return True
    return False


def is_basic(mol: Molecule, i: int) -> bool:
    """sp3 amine nitrogen not next to a carbonyl, or amidine/guanidine N."""
    atom = mol.atoms[i]
    if atom.element != "N" or atom.aromatic:
        return False
    if _in_amidine(mol, i):
        return True
    if any(o is not BondOrder.SINGLE for o in _orders(mol, i)):
        return False
    return not any(_is_carbonyl_carbon(mol, j) for j in mol.neighbors(i))


def _unsaturated_elsewhere(mol: Molecule, atom: int, bond_index: int) -> bool:
    return any(
        b != bond_index and mol.bonds[b].order is not BondOrder.SINGLE for _, b in mol.adjacency[atom]
    )


def is_conjugated(mol: Molecule, bond_index: int) -> bool:
    bond = mol.bonds[bond_index]
    if bond.order is BondOrder.AROMATIC:
        return True
    if bond.order is BondOrder.SINGLE:
        return _unsaturated_elsewhere(mol, bond.begin, bond_index) and _unsaturated_elsewhere(
            mol, bond.end, bond_index
        )
    # multiple bond: next to an aromatic bond or a conjugating single bond
    for end in (bond.begin, bond.end):
        for j, b in mol.adjacency[end]:
            if b == bond_index:
                continue
            other = mol.bonds[b]
            if other.order is BondOrder.AROMATIC:
                return True
            if other.order is BondOrder.SINGLE and _unsaturated_elsewhere(mol, j, b):
                return True
    return False


# -- vectors -----------------------------------------------------------------

def _one_hot(width: int, position: int) -> list[float]:
    v = [0.0] * width
    v[min(max(position, 0), width - 1)] = 1.0
    return v


def atom_features(mol: Molecule, atom_index: int) -> np.ndarray:
    if not 0 <= atom_index < mol.n_atoms:
        raise IndexError(f"atom index {atom_index} out of range for {mol.n_atoms} atoms")
    atom = mol.atoms[atom_index]
    rings = mol.rings
    symbol = ATOM_SYMBOLS.index(atom.element) if atom.element in ATOM_SYMBOLS else len(ATOM_SYMBOLS)
    sizes = rings.atom_ring_sizes[atom_index] if rings else frozenset()
    chir = atom.chirality if isinstance(atom.chirality, Chirality) else Chirality(atom.chirality)
    vec: list[float] = []
    vec += _one_hot(16, symbol)
    vec += _one_hot(6, mol.degree(atom_index))
    vec += [float(atom.formal_charge)]
    vec += [0.0]  # radical electrons: not representable in the accepted SMILES subset
    vec += _one_hot(6, HYBRIDIZATIONS.index(hybridization(mol, atom_index)))
    vec += [float(atom.aromatic)]
    vec += _one_hot(5, mol.total_h(atom_index))
    vec += _one_hot(4, int(chir))
    vec += [float(rings.atom_in_ring[atom_index]) if rings else 0.0]
    vec += [float(s in sizes) for s in RING_SIZES]
    vec += [atom.mass * MASS_SCALE]
    vec += _one_hot(7, mol.implicit_h[atom_index] if mol.implicit_h else 0)
    vec += [float(is_acceptor(mol, atom_index))]
    vec += [float(is_donor(mol, atom_index))]
    vec += [float(is_acidic(mol, atom_index))]
    vec += [float(is_basic(mol, atom_index))]
    return np.asarray(vec, dtype=np.float64)


def bond_features(mol: Molecule, bond_index: int) -> np.ndarray:
    if not 0 <= bond_index < mol.n_bonds:
        raise IndexError(f"bond index {bond_index} out of range for {mol.n_bonds} bonds")
    bond = mol.bonds[bond_index]
    kind = [1.0, 0.0, 0.0, 0.0, 0.0]
    kind[int(bond.order)] = 1.0
    wedge = [float(bond.wedge == 1), float(bond.wedge == 2)]
    ring = float(mol.rings.bond_in_ring[bond_index]) if mol.rings else 0.0
    vec = kind + [float(is_conjugated(mol, bond_index))] + wedge + [ring] + _one_hot(6, bond.stereo)
    return np.asarray(vec, dtype=np.float64)


@dataclass
class FeaturizedGraph:
    atom_features: np.ndarray  # (n, 57)
    bond_features: np.ndarray  # (m, 15)
    adjacency: np.ndarray  # (n, n) 0/1
    incidence: list[list[tuple[int, int]]]  # per atom: (neighbor, bond index)
    bond_atoms: np.ndarray  # (m, 2)

    @property
    def n_atoms(self) -> int:
        return self.atom_features.shape[0]

    @property
    def n_bonds(self) -> int:
        return self.bond_features.shape[0]

    def node_inputs(self) -> np.ndarray:
        """Atom features with the sum of incident bond features appended (n, 72)."""
        bond_sum = np.zeros((self.n_atoms, BOND_DIM))
        if self.n_bonds:
            np.add.at(bond_sum, self.bond_atoms[:, 0], self.bond_features)
            np.add.at(bond_sum, self.bond_atoms[:, 1], self.bond_features)
        return np.concatenate([self.atom_features, bond_sum], axis=1)


def featurize(mol: Molecule) -> FeaturizedGraph:
    if mol.n_atoms == 0:
        raise DataError("cannot featurize an empty molecule")
    n = mol.n_atoms
    atoms = np.stack([atom_features(mol, i) for i in range(n)])
    if mol.n_bonds:
        bonds = np.stack([bond_features(mol, b) for b in range(mol.n_bonds)])
        pairs = np.array([(b.begin, b.end) for b in mol.bonds], dtype=np.int64)
    else:
        bonds = np.zeros((0, BOND_DIM))
        pairs = np.zeros((0, 2), dtype=np.int64)
    adjacency = np.zeros((n, n))
    if len(pairs):
        adjacency[pairs[:, 0], pairs[:, 1]] = 1.0
        adjacency[pairs[:, 1], pairs[:, 0]] = 1.0
    incidence = [list(nbrs) for nbrs in mol.adjacency]
    return FeaturizedGraph(atoms, bonds, adjacency, incidence, pairs)
