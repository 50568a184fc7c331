"""Bemis-Murcko scaffolds and canonical graph keys."""

from __future__ import annotations

from .molecule import BondOrder, Molecule
from .smiles import prepare

_BOND_CHARS = {BondOrder.SINGLE: "-", BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}

# Upper bound on tie-break branches explored before falling back to the
# first candidate; keeps pathological symmetric graphs tractable.
_MAX_LEAVES = 2048


def bemis_murcko_scaffold(mol: Molecule) -> Molecule:
    """Ring systems plus linkers; acyclic molecules give an empty molecule."""
    if mol.rings is None:
        prepare(mol)
    ring_atoms = mol.rings.atom_in_ring
    alive = [True] * mol.n_atoms
    degree = [mol.degree(i) for i in range(mol.n_atoms)]
    changed = True
    while changed:
        changed = False
        for i in range(mol.n_atoms):
            if alive[i] and not ring_atoms[i] and degree[i] <= 1:
                alive[i] = False
                changed = True
                for j in mol.neighbors(i):
                    if alive[j]:
                        degree[j] -= 1
    keep = [i for i in range(mol.n_atoms) if alive[i]]
    return prepare(mol.subgraph(keep))


def _atom_label(mol: Molecule, i: int) -> str:
    a = mol.atoms[i]
    sym = a.element.lower() if a.aromatic else a.element
    h = mol.total_h(i)
    parts = [str(a.isotope) if a.isotope is not None else "", sym]
    if h:
        parts.append(f"H{h}" if h > 1 else "H")
    if a.formal_charge:
        parts.append(f"{a.formal_charge:+d}")
    return "[" + "".join(parts) + "]"


def _refine(mol: Molecule, ranks: list[int], labels: list[str]) -> list[int]:
    """Iterate neighborhood refinement until the partition stops splitting."""
    n = mol.n_atoms
    while True:
        sigs = []
        for i in range(n):
            nbrs = sorted((ranks[j], mol.bonds[b].order.value) for j, b in mol.adjacency[i])
            sigs.append((ranks[i], tuple(nbrs)))
        order = sorted(set(sigs))
        lookup = {s: k for k, s in enumerate(order)}
        new = [lookup[s] for s in sigs]
        if len(order) == len(set(ranks)):
            return new
        ranks = new


def _initial_ranks(mol: Molecule, labels: list[str]) -> list[int]:
    ring = mol.rings.atom_in_ring if mol.rings else (False,) * mol.n_atoms
    inv = [(labels[i], mol.degree(i), ring[i]) for i in range(mol.n_atoms)]
    order = sorted(set(inv))
    lookup = {s: k for k, s in enumerate(order)}
    return [lookup[s] for s in inv]


def _serialize(mol: Molecule, ranks: list[int], labels: list[str]) -> str:
    """DFS serialization visiting neighbors in rank order, SMILES-like."""
    n = mol.n_atoms
    visited = [False] * n
    out: list[str] = []
    ring_id = 0
    # ring-closure digits: assigned when a back edge is first seen
    closures: dict[int, list[str]] = {i: [] for i in range(n)}
    used_bonds: set[int] = set()

    def plan(start: int) -> None:
        # first pass decides tree edges and ring-closure edges
        nonlocal ring_id
        order_seen = [False] * n
        tree: dict[int, list[tuple[int, int]]] = {i: [] for i in range(n)}
        back: list[tuple[int, int, int]] = []

        def visit(v: int, parent_bond: int) -> None:
            order_seen[v] = True
            for u, b in sorted(mol.adjacency[v], key=lambda t: ranks[t[0]]):
                if b == parent_bond:
                    continue
                if order_seen[u]:
                    if b not in used_bonds:
                        used_bonds.add(b)
                        back.append((u, v, b))
                    continue
                used_bonds.add(b)
                tree[v].append((u, b))
                visit(u, b)

        visit(start, -1)
        for u, v, b in back:
            ring_id += 1
            bond = _BOND_CHARS[mol.bonds[b].order]
            closures[u].append(f"{bond}{ring_id}")
            closures[v].append(f"{bond}{ring_id}")

        def emit(v: int) -> None:
            visited[v] = True
            out.append(labels[v] + "".join(closures[v]))
            kids = tree[v]
            for k, (u, b) in enumerate(kids):
                bond = _BOND_CHARS[mol.bonds[b].order]
                if k < len(kids) - 1:
                    out.append("(" + bond)
                    emit(u)
                    out.append(")")
                else:
                    out.append(bond)
                    emit(u)

        emit(start)

    for start in sorted(range(n), key=lambda i: ranks[i]):
        if not visited[start]:
            if out:
                out.append(".")
            plan(start)
    return "".join(out)


def _canonical(mol: Molecule, ranks: list[int], labels: list[str], budget: list[int]) -> str:
    ranks = _refine(mol, ranks, labels)
    if len(set(ranks)) == mol.n_atoms:
        budget[0] -= 1
        return _serialize(mol, ranks, labels)
    # break the tie in the lowest tied class; try every member unless the
    # budget is exhausted
    counts: dict[int, int] = {}
    for r in ranks:
        counts[r] = counts.get(r, 0) + 1
    tied_rank = min(r for r, c in counts.items() if c > 1)
    members = [i for i in range(mol.n_atoms) if ranks[i] == tied_rank]
    best: str | None = None
    for m in members:
        if best is not None and budget[0] <= 0:
            break
        trial = [2 * r + (0 if (r != tied_rank or i == m) else 1) for i, r in enumerate(ranks)]
        key = _canonical(mol, trial, labels, budget)
        if best is None or key < best:
            best = key
    assert best is not None
    return best


def canonical_key(mol: Molecule) -> str:
    """Order-invariant string for a whole molecular graph."""
    if mol.n_atoms == 0:
        return ""
    if mol.rings is None:
        prepare(mol)
    labels = [_atom_label(mol, i) for i in range(mol.n_atoms)]
    return _canonical(mol, _initial_ranks(mol, labels), labels, [_MAX_LEAVES])


def scaffold_key(mol: Molecule) -> str:
    """Canonical key of an already-computed scaffold molecule ("" if empty)."""
    return canonical_key(mol)


def murcko_key(mol: Molecule) -> str:
    """Convenience: scaffold then key."""
    return scaffold_key(bemis_murcko_scaffold(mol))
