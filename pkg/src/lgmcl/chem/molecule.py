"""Molecular graph data types."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property

from .elements import atomic_weight


class Chirality(IntEnum):
    NONE = 0
    CLOCKWISE = 1
    COUNTERCLOCKWISE = 2
    OTHER = 3


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> float:
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)


class Wedge(IntEnum):
    NONE = 0
    UP = 1
    DOWN = 2


# Bond stereo codes, same numbering as the usual toolkit convention.
STEREO_NONE = 0
STEREO_ANY = 1
STEREO_Z = 2
STEREO_E = 3
STEREO_CIS = 4
STEREO_TRANS = 5


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int | None = None  # set only for bracket atoms
    isotope: int | None = None
    chirality: Chirality = Chirality.NONE
    index: int = 0

    @property
    def bracket(self) -> bool:
        return self.explicit_h is not None

    @property
    def mass(self) -> float:
        if self.isotope is not None:
            return float(self.isotope)
        return atomic_weight(self.element)


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder = BondOrder.SINGLE
    stereo: int = STEREO_NONE
    wedge: Wedge = Wedge.NONE
    index: int = 0

    def other(self, atom: int) -> int:
        return self.end if atom == self.begin else self.begin

    @property
    def pair(self) -> frozenset[int]:
        return frozenset((self.begin, self.end))


@dataclass(frozen=True)
class RingInfo:
    atom_in_ring: tuple[bool, ...]
    bond_in_ring: tuple[bool, ...]
    # smallest-ring sizes seen through each atom (all sizes, featurizer keeps 3..6)
    atom_ring_sizes: tuple[frozenset[int], ...]
    bond_ring_size: tuple[int, ...]  # 0 when not in a ring
    # independent smallest cycles, each a sorted tuple of bond indices
    rings: tuple[tuple[int, ...], ...] = ()

    @property
    def ring_count(self) -> int:
        return len(self.rings)


@dataclass
class Molecule:
    atoms: list[Atom]
    bonds: list[Bond]
    rings: RingInfo | None = None
    implicit_h: list[int] = field(default_factory=list)
    overvalent: list[bool] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @cached_property
    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per atom: list of (neighbor atom, bond index)."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for b in self.bonds:
            adj[b.begin].append((b.end, b.index))
            adj[b.end].append((b.begin, b.index))
        return adj

    def neighbors(self, atom: int) -> list[int]:
        return [j for j, _ in self.adjacency[atom]]

    def degree(self, atom: int) -> int:
        return len(self.adjacency[atom])

    def total_h(self, atom: int) -> int:
        a = self.atoms[atom]
        explicit = a.explicit_h or 0
        implicit = self.implicit_h[atom] if self.implicit_h else 0
        return explicit + implicit

    def bond_between(self, i: int, j: int) -> Bond | None:
        for k, b in self.adjacency[i]:
            if k == j:
                return self.bonds[b]
        return None

    def bond_valence(self, atom: int) -> float:
        return sum(self.bonds[b].order.valence for _, b in self.adjacency[atom])

    def components(self) -> list[list[int]]:
        seen = [False] * self.n_atoms
        comps: list[list[int]] = []
        for start in range(self.n_atoms):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                v = stack.pop()
                comp.append(v)
                for u, _ in self.adjacency[v]:
                    if not seen[u]:
                        seen[u] = True
                        stack.append(u)
            comps.append(sorted(comp))
        return comps

    def subgraph(self, keep: list[int]) -> Molecule:
        """Induced subgraph on ``keep`` (kept in given order), reindexed.

        Ring info and hydrogens are not carried over; callers re-derive them.
        """
        remap = {old: new for new, old in enumerate(keep)}
        atoms = [replace(self.atoms[old], index=new) for new, old in enumerate(keep)]
        bonds: list[Bond] = []
        for b in self.bonds:
            if b.begin in remap and b.end in remap:
                bonds.append(replace(b, begin=remap[b.begin], end=remap[b.end], index=len(bonds)))
        return Molecule(atoms=atoms, bonds=bonds)

    def permute(self, order: list[int]) -> Molecule:
        """Reindex atoms so that new atom ``i`` is old atom ``order[i]``.

        Bond list order is shuffled consistently (sorted by new endpoints).
        Derived data is recomputed by the caller via ``prepare``.
        """
        if sorted(order) != list(range(self.n_atoms)):
            raise ValueError("order must be a permutation of atom indices")
        sub = self.subgraph(order)
        bonds = sorted(sub.bonds, key=lambda b: (min(b.begin, b.end), max(b.begin, b.end)))
        sub.bonds = [replace(b, index=i) for i, b in enumerate(bonds)]
        return sub
