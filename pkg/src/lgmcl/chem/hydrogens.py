"""Implicit hydrogen assignment for organic-subset atoms."""

from __future__ import annotations

import math

from .elements import allowed_valences
from .molecule import BondOrder, Molecule


def _implicit_h_for(mol: Molecule, i: int) -> tuple[int, bool]:
    atom = mol.atoms[i]
    if atom.bracket:
        # Bracket atoms carry their hydrogens verbatim; flag only.
        valences = allowed_valences(atom.element, atom.formal_charge)
        used = mol.bond_valence(i) + (atom.explicit_h or 0)
        over = bool(valences) and math.ceil(used - 1e-9) > max(valences) and not atom.aromatic
        return 0, over
    valences = allowed_valences(atom.element, atom.formal_charge)
    if not valences:
        return 0, False
    if atom.aromatic:
        # aromatic bonds count 1 each plus one for the shared pi electron
        used = 1
        for _, b in mol.adjacency[i]:
            order = mol.bonds[b].order
            used += 1 if order is BondOrder.AROMATIC else order.value
    else:
        used = int(sum(mol.bonds[b].order.valence for _, b in mol.adjacency[i]))
    for v in valences:
        if v >= used:
            return v - used, False
    return 0, not atom.aromatic or used > max(valences) + 1


def assign_implicit_hydrogens(mol: Molecule) -> Molecule:
    """Fill ``mol.implicit_h`` and ``mol.overvalent`` in place and return ``mol``."""
    counts, flags = [], []
    for i in range(mol.n_atoms):
        h, over = _implicit_h_for(mol, i)
        counts.append(h)
        flags.append(over)
    mol.implicit_h = counts
    mol.overvalent = flags
    return mol
