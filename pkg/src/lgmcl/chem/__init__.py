"""SMILES parsing and structural perception."""

from .hydrogens import assign_implicit_hydrogens
from .molecule import Atom, Bond, BondOrder, Chirality, Molecule, RingInfo, Wedge
from .rings import perceive_rings
from .scaffold import bemis_murcko_scaffold, canonical_key, murcko_key, scaffold_key
from .smiles import SmilesError, parse_smiles, prepare

__all__ = [
    "Atom",
    "Bond",
    "BondOrder",
    "Chirality",
    "Molecule",
    "RingInfo",
    "SmilesError",
    "Wedge",
    "assign_implicit_hydrogens",
    "bemis_murcko_scaffold",
    "canonical_key",
    "murcko_key",
    "parse_smiles",
    "perceive_rings",
    "prepare",
    "scaffold_key",
]
