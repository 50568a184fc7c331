"""Whole-molecule descriptors and the normalized template description."""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..chem.elements import HALOGENS, atomic_weight
from ..chem.molecule import BondOrder, Chirality, Molecule
from .features import is_acceptor, is_acidic, is_basic, is_donor


@dataclass(frozen=True)
class DescriptorSet:
    molecular_weight: float
    heavy_atom_count: int
    ring_count: int
    aromatic_ring_count: int
    hbd_count: int
    hba_count: int
    net_formal_charge: int
    rotatable_bond_estimate: int


def compute_descriptors(mol: Molecule) -> DescriptorSet:
    hydrogen = atomic_weight("H")
    weight = sum(a.mass + mol.total_h(i) * hydrogen for i, a in enumerate(mol.atoms))
    n_components = len(mol.components()) if mol.n_atoms else 0
    ring_count = mol.n_bonds - mol.n_atoms + n_components
    aromatic_rings = 0
    if mol.rings is not None:
        aromatic_rings = sum(
            all(mol.bonds[b].order is BondOrder.AROMATIC for b in ring) for ring in mol.rings.rings
        )
    rotatable = 0
    for b in mol.bonds:
        if b.order is not BondOrder.SINGLE or (mol.rings and mol.rings.bond_in_ring[b.index]):
            continue
        if mol.degree(b.begin) >= 2 and mol.degree(b.end) >= 2:
            rotatable += 1
    return DescriptorSet(
        molecular_weight=weight,
        heavy_atom_count=sum(a.element != "H" for a in mol.atoms),
        ring_count=ring_count,
        aromatic_ring_count=aromatic_rings,
        hbd_count=sum(is_donor(mol, i) for i in range(mol.n_atoms)),
        hba_count=sum(is_acceptor(mol, i) for i in range(mol.n_atoms)),
        net_formal_charge=sum(a.formal_charge for a in mol.atoms),
        rotatable_bond_estimate=rotatable,
    )


TEMPLATE_PATTERN = re.compile(
    r"^Scaffold: [a-z0-9 ,]+\. "
    r"Salient features: [a-z ,]+\. "
    r"Physicochemical profile: molecular weight \d+\.\d{2} daltons, \d+ heavy atoms, "
    r"hydrogen bond donor count \d+, hydrogen bond acceptor count \d+, "
    r"net formal charge -?\d+, rotatable bond count \d+\.$"
)

_ELEMENT_NAMES = {
    "N": "nitrogen", "O": "oxygen", "S": "sulfur", "P": "phosphorus", "B": "boron",
    "Si": "silicon", "Se": "selenium", "F": "fluorine", "Cl": "chlorine", "Br": "bromine",
    "I": "iodine",
}


def _fused(mol: Molecule) -> bool:
    rings = [set(r) for r in mol.rings.rings] if mol.rings else []
    return any(rings[i] & rings[j] for i in range(len(rings)) for j in range(i + 1, len(rings)))


def _scaffold_clause(mol: Molecule, d: DescriptorSet) -> str:
    if d.ring_count == 0:
        return "acyclic structure without ring systems"
    if d.aromatic_ring_count == d.ring_count:
        kind = "aromatic"
    elif d.aromatic_ring_count == 0:
        kind = "aliphatic"
    else:
        kind = "mixed aromatic and aliphatic"
    noun = "ring" if d.ring_count == 1 else "rings"
    clause = f"{kind} scaffold with {d.ring_count} {noun}, {d.aromatic_ring_count} aromatic"
    if _fused(mol):
        clause += ", fused ring system"
    return clause


def _feature_clauses(mol: Molecule, d: DescriptorSet) -> list[str]:
    n = mol.n_atoms
    out: list[str] = []
    if any(is_acidic(mol, i) for i in range(n)):
        out.append("acidic group")
    if any(is_basic(mol, i) for i in range(n)):
        out.append("basic nitrogen")
    if d.hbd_count:
        out.append("hydrogen bond donor")
    if d.hba_count:
        out.append("hydrogen bond acceptor")
    for b in mol.bonds:
        pair = {mol.atoms[b.begin].element, mol.atoms[b.end].element}
        if b.order is BondOrder.DOUBLE and pair == {"C", "O"}:
            out.append("carbonyl group")
            break
    if any(b.order is BondOrder.TRIPLE and {mol.atoms[b.begin].element, mol.atoms[b.end].element} == {"C", "N"} for b in mol.bonds):
        out.append("nitrile group")
    if any(a.aromatic and a.element != "C" for a in mol.atoms):
        out.append("aromatic heterocycle")
    present = {a.element for a in mol.atoms}
    halogens = [_ELEMENT_NAMES[e] for e in ("F", "Cl", "Br", "I") if e in present]
    if halogens:
        out.append("halogen substituents " + " and ".join(halogens))
    hetero = [_ELEMENT_NAMES[e] for e in ("N", "O", "S", "P", "B", "Si", "Se") if e in present]
    if hetero:
        out.append("heteroatoms " + " and ".join(hetero))
    if any(a.formal_charge for a in mol.atoms):
        out.append("charged atoms")
    if any(a.chirality is not Chirality.NONE for a in mol.atoms):
        out.append("defined stereocenters")
    if any(b.stereo for b in mol.bonds):
        out.append("double bond geometry")
    if any(a.element not in HALOGENS and a.element not in _ELEMENT_NAMES and a.element not in ("C", "H") for a in mol.atoms):
        out.append("uncommon elements")
    return out or ["no notable functional groups"]


def generate_template_text(mol: Molecule, descriptors: DescriptorSet | None = None) -> str:
    """Fixed-format description with Scaffold / Salient features / profile sections."""
    d = descriptors if descriptors is not None else compute_descriptors(mol)
    return (
        f"Scaffold: {_scaffold_clause(mol, d)}. "
        f"Salient features: {', '.join(_feature_clauses(mol, d))}. "
        f"Physicochemical profile: molecular weight {d.molecular_weight:.2f} daltons, "
        f"{d.heavy_atom_count} heavy atoms, hydrogen bond donor count {d.hbd_count}, "
        f"hydrogen bond acceptor count {d.hba_count}, net formal charge {d.net_formal_charge}, "
        f"rotatable bond count {d.rotatable_bond_estimate}."
    )
