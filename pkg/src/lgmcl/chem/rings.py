"""Ring perception by per-bond shortest alternative paths."""

from __future__ import annotations

from collections import deque

from .molecule import Molecule, RingInfo


def _bfs_distances(mol: Molecule, source: int, banned_bond: int) -> list[int]:
    dist = [-1] * mol.n_atoms
    dist[source] = 0
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for u, b in mol.adjacency[v]:
            if b == banned_bond or dist[u] >= 0:
                continue
            dist[u] = dist[v] + 1
            queue.append(u)
    return dist


def _shortest_cycle(mol: Molecule, bond_index: int) -> tuple[int, list[int]] | None:
    """Smallest cycle through a bond: (size, atoms lying on any such cycle).

    Taking every atom on *any* shortest alternative path keeps the result
    independent of neighbor iteration order.
    """
    b = mol.bonds[bond_index]
    du = _bfs_distances(mol, b.begin, bond_index)
    if du[b.end] < 0:
        return None
    dv = _bfs_distances(mol, b.end, bond_index)
    length = du[b.end]
    atoms = [w for w in range(mol.n_atoms) if du[w] >= 0 and dv[w] >= 0 and du[w] + dv[w] == length]
    return length + 1, atoms


def _one_cycle_bonds(mol: Molecule, bond_index: int) -> frozenset[int]:
    """Bond set of one concrete smallest cycle through ``bond_index``."""
    b = mol.bonds[bond_index]
    start, goal = b.begin, b.end
    parent: dict[int, tuple[int, int]] = {start: (-1, -1)}
    queue = deque([start])
    while queue and goal not in parent:
        v = queue.popleft()
        for u, e in sorted(mol.adjacency[v]):
            if e == bond_index or u in parent:
                continue
            parent[u] = (v, e)
            queue.append(u)
    cycle = {bond_index}
    v = goal
    while v != start:
        v, e = parent[v]
        cycle.add(e)
    return frozenset(cycle)


def _independent_rings(mol: Molecule, candidates: list[frozenset[int]]) -> list[tuple[int, ...]]:
    """Greedy GF(2) basis of the cycle space from smallest candidates first."""
    target = mol.n_bonds - mol.n_atoms + len(mol.components())
    basis: dict[int, int] = {}  # pivot bit -> reduced vector
    chosen: list[tuple[int, ...]] = []
    for cyc in sorted(set(candidates), key=lambda c: (len(c), sorted(c))):
        vec = 0
        for e in cyc:
            vec |= 1 << e
        while vec:
            pivot = vec.bit_length() - 1
            if pivot not in basis:
                basis[pivot] = vec
                chosen.append(tuple(sorted(cyc)))
                break
            vec ^= basis[pivot]
        if len(chosen) == target:
            break
    return chosen


def perceive_rings(mol: Molecule) -> RingInfo:
    """Ring membership and smallest ring sizes for every atom and bond."""
    n, m = mol.n_atoms, mol.n_bonds
    bond_in_ring = [False] * m
    bond_size = [0] * m
    atom_sizes: list[set[int]] = [set() for _ in range(n)]
    candidates: list[frozenset[int]] = []
    for bi in range(m):
        found = _shortest_cycle(mol, bi)
        if found is None:
            continue
        size, atoms = found
        bond_in_ring[bi] = True
        bond_size[bi] = size
        for a in atoms:
            atom_sizes[a].add(size)
        candidates.append(_one_cycle_bonds(mol, bi))
    atom_in_ring = [False] * n
    for b in mol.bonds:
        if bond_in_ring[b.index]:
            atom_in_ring[b.begin] = atom_in_ring[b.end] = True
    return RingInfo(
        atom_in_ring=tuple(atom_in_ring),
        bond_in_ring=tuple(bond_in_ring),
        atom_ring_sizes=tuple(frozenset(s) for s in atom_sizes),
        bond_ring_size=tuple(bond_size),
        rings=tuple(_independent_rings(mol, candidates)),
    )
