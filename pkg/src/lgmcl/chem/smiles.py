"""SMILES parsing into an explicit molecular graph.

Supported: organic-subset and bracket atoms (isotope, chirality, H count,
charge, atom class), bonds ``- = # : / \\``, ring closures including ``%nn``,
branches and dot-separated components.  Aromaticity is read from the
notation and never re-perceived.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..errors import DataError
from .elements import AROMATIC_BRACKET, AROMATIC_ORGANIC, ELEMENTS, ORGANIC_SUBSET
from .hydrogens import assign_implicit_hydrogens
from .molecule import (
    STEREO_CIS,
    STEREO_TRANS,
    Atom,
    Bond,
    BondOrder,
    Chirality,
    Molecule,
    Wedge,
)
from .rings import perceive_rings


class SmilesError(DataError):
    """Malformed SMILES; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int, smiles: str = ""):
        super().__init__(f"{message} at position {position}")
        self.reason = message
        self.position = position
        self.smiles = smiles

    code = "smiles"


_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
}


@dataclass
class _RawBond:
    begin: int
    end: int
    symbol: str | None  # None: implicit
    position: int


def _capitalize(sym: str) -> str:
    return sym[0].upper() + sym[1:]


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[Atom] = []
        self.raw_bonds: list[_RawBond] = []
        self.pairs: set[frozenset[int]] = set()

    def error(self, message: str, position: int | None = None) -> SmilesError:
        return SmilesError(message, self.pos if position is None else position, self.text)

    # -- atoms -----------------------------------------------------------
    def _organic_atom(self) -> Atom | None:
        text, i = self.text, self.pos
        two = text[i : i + 2]
        if two in ("Cl", "Br"):
            self.pos += 2
            return Atom(element=two, index=len(self.atoms))
        ch = text[i]
        if ch in ORGANIC_SUBSET:
            self.pos += 1
            return Atom(element=ch, index=len(self.atoms))
        if ch in AROMATIC_ORGANIC:
            self.pos += 1
            return Atom(element=ch.upper(), aromatic=True, index=len(self.atoms))
        return None

    def _read_int(self) -> int | None:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        return int(self.text[start : self.pos]) if self.pos > start else None

    def _bracket_atom(self) -> Atom:
        open_pos = self.pos
        close = self.text.find("]", open_pos)
        if close < 0:
            raise self.error("unclosed bracket atom", open_pos)
        self.pos += 1
        isotope = self._read_int()
        body_start = self.pos
        text = self.text
        # element symbol
        sym, aromatic = None, False
        for cand in sorted(AROMATIC_BRACKET, key=len, reverse=True):
            if text.startswith(cand, self.pos) and self.pos + len(cand) <= close:
                sym, aromatic = _capitalize(cand), True
                self.pos += len(cand)
                break
        if sym is None:
            ch = text[self.pos] if self.pos < close else ""
            if not ch.isupper():
                raise self.error("invalid bracket-atom syntax: expected element symbol", body_start)
            two = text[self.pos : self.pos + 2]
            if len(two) == 2 and two[1].islower() and two in ELEMENTS and self.pos + 2 <= close:
                sym = two
            elif ch in ELEMENTS:
                sym = ch
            else:
                raise self.error(f"unknown element symbol {text[self.pos:self.pos+2]!r}", self.pos)
            self.pos += len(sym)
        # chirality
        chirality = Chirality.NONE
        if self.pos < close and text[self.pos] == "@":
            if text.startswith("@@", self.pos):
                chirality = Chirality.CLOCKWISE
                self.pos += 2
            else:
                self.pos += 1
                chirality = Chirality.COUNTERCLOCKWISE
                if text[self.pos : self.pos + 2] in ("TH", "AL", "SP", "TB", "OH"):
                    self.pos += 2
                    self._read_int()
                    chirality = Chirality.OTHER
        # hydrogens
        h = 0
        if self.pos < close and text[self.pos] == "H":
            self.pos += 1
            count = self._read_int()
            h = 1 if count is None else count
        # charge
        charge = 0
        if self.pos < close and text[self.pos] in "+-":
            sign = 1 if text[self.pos] == "+" else -1
            self.pos += 1
            magnitude = self._read_int()
            if magnitude is None:
                magnitude = 1
                while self.pos < close and text[self.pos] == ("+" if sign > 0 else "-"):
                    magnitude += 1
                    self.pos += 1
            charge = sign * magnitude
        # atom class (ignored)
        if self.pos < close and text[self.pos] == ":":
            self.pos += 1
            if self._read_int() is None:
                raise self.error("invalid bracket-atom syntax: atom class needs digits", self.pos)
        if self.pos != close:
            raise self.error("invalid bracket-atom syntax", self.pos)
        if not -4 <= charge <= 4:
            raise self.error(f"formal charge {charge:+d} out of range", open_pos)
        self.pos = close + 1
        return Atom(
            element=sym,
            aromatic=aromatic,
            formal_charge=charge,
            explicit_h=h,
            isotope=isotope,
            chirality=chirality,
            index=len(self.atoms),
        )

    # -- bonds -----------------------------------------------------------
    def _add_bond(self, a: int, b: int, symbol: str | None, position: int) -> None:
        if a == b:
            raise self.error("ring closure onto the same atom", position)
        key = frozenset((a, b))
        if key in self.pairs:
            raise self.error("duplicate bond between the same atom pair", position)
        self.pairs.add(key)
        self.raw_bonds.append(_RawBond(a, b, symbol, position))

    def parse(self) -> tuple[list[Atom], list[_RawBond]]:
        text = self.text
        if not text:
            raise SmilesError("empty SMILES", 0, text)
        prev: int | None = None
        pending: tuple[str, int] | None = None
        branches: list[tuple[int | None, int]] = []
        rings: dict[int, tuple[int, str | None, int]] = {}
        while self.pos < len(text):
            ch = text[self.pos]
            start = self.pos
            if ch == "[" or ch.isalpha():
                atom = self._bracket_atom() if ch == "[" else self._organic_atom()
                if atom is None:
                    raise self.error(f"unknown element symbol {ch!r}", start)
                self.atoms.append(atom)
                idx = atom.index
                if prev is not None:
                    sym, bpos = pending if pending else (None, start)
                    self._add_bond(prev, idx, sym, bpos)
                elif pending is not None:
                    raise self.error("bond symbol without a preceding atom", pending[1])
                pending = None
                prev = idx
            elif ch in _BOND_SYMBOLS:
                if pending is not None:
                    raise self.error("two consecutive bond symbols", start)
                if prev is None:
                    raise self.error("bond symbol without a preceding atom", start)
                pending = (ch, start)
                self.pos += 1
            elif ch == "(":
                if prev is None:
                    raise self.error("branch opened without a preceding atom", start)
                if pending is not None:
                    raise self.error("bond symbol before branch", pending[1])
                branches.append((prev, start))
                self.pos += 1
            elif ch == ")":
                if not branches:
                    raise self.error("unmatched parenthesis ')'", start)
                if pending is not None:
                    raise self.error("dangling bond symbol", pending[1])
                prev, _ = branches.pop()
                self.pos += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    raise self.error("ring closure without a preceding atom", start)
                if ch == "%":
                    digits = text[self.pos + 1 : self.pos + 3]
                    if len(digits) != 2 or not digits.isdigit():
                        raise self.error("'%' must be followed by two digits", start)
                    number = int(digits)
                    self.pos += 3
                else:
                    number = int(ch)
                    self.pos += 1
                sym = pending[0] if pending else None
                pending = None
                if number in rings:
                    other, other_sym, opos = rings.pop(number)
                    if sym and other_sym and sym != other_sym and not {sym, other_sym} <= {"/", "\\"}:
                        raise self.error(f"conflicting ring-closure bond symbols for ring {number}", start)
                    self._add_bond(other, prev, sym or other_sym, opos)
                else:
                    rings[number] = (prev, sym, start)
            elif ch == ".":
                if pending is not None:
                    raise self.error("dangling bond symbol", pending[1])
                if branches:
                    raise self.error("unmatched parenthesis '('", branches[-1][1])
                prev = None
                self.pos += 1
            else:
                raise self.error(f"unexpected character {ch!r}", start)
        if pending is not None:
            raise self.error("dangling bond symbol", pending[1])
        if branches:
            raise self.error("unmatched parenthesis '('", branches[-1][1])
        if rings:
            number, (_, _, opos) = min(rings.items(), key=lambda kv: kv[1][2])
            raise self.error(f"unclosed ring digit {number}", opos)
        if not self.atoms:
            raise SmilesError("no atoms in SMILES", 0, text)
        return self.atoms, self.raw_bonds


def _direction(raw: _RawBond, atom: int) -> int:
    """+1/-1 direction of a '/' or '\\' bond viewed outward from ``atom``."""
    sign = 1 if raw.symbol == "/" else -1
    return sign if raw.begin == atom else -sign


def _build_bonds(atoms: list[Atom], raw: list[_RawBond], ring_flags: tuple[bool, ...] | None) -> list[Bond]:
    bonds = []
    for i, rb in enumerate(raw):
        if rb.symbol is None:
            both_aromatic = atoms[rb.begin].aromatic and atoms[rb.end].aromatic
            in_ring = ring_flags[i] if ring_flags is not None else True
            order = BondOrder.AROMATIC if both_aromatic and in_ring else BondOrder.SINGLE
        else:
            order = _BOND_SYMBOLS[rb.symbol]
        wedge = Wedge.NONE
        if rb.symbol == "/":
            wedge = Wedge.UP
        elif rb.symbol == "\\":
            wedge = Wedge.DOWN
        bonds.append(Bond(begin=rb.begin, end=rb.end, order=order, wedge=wedge, index=i))
    # cis/trans from directional bonds flanking a double bond
    directional: dict[int, list[_RawBond]] = {}
    for rb in raw:
        if rb.symbol in ("/", "\\"):
            directional.setdefault(rb.begin, []).append(rb)
            directional.setdefault(rb.end, []).append(rb)
    for i, b in enumerate(bonds):
        if b.order is not BondOrder.DOUBLE:
            continue
        left = [r for r in directional.get(b.begin, []) if r.begin != b.end and r.end != b.end]
        right = [r for r in directional.get(b.end, []) if r.begin != b.begin and r.end != b.begin]
        if left and right:
            d1 = _direction(left[0], b.begin)
            d2 = _direction(right[0], b.end)
            bonds[i] = replace(b, stereo=STEREO_TRANS if d1 == -d2 else STEREO_CIS)
    return bonds


def prepare(mol: Molecule) -> Molecule:
    """Derive ring info and implicit hydrogens for a graph in place."""
    mol.__dict__.pop("adjacency", None)
    mol.rings = perceive_rings(mol)
    assign_implicit_hydrogens(mol)
    return mol


def parse_smiles(text: str, keep_largest: bool = True) -> Molecule:
    """Parse a SMILES string into a :class:`Molecule` with rings and hydrogens.

    With ``keep_largest`` only the largest dot-separated component is kept
    (ties go to the first); otherwise all components are returned together.
    """
    if not isinstance(text, str) or not text.strip():
        raise SmilesError("empty SMILES", 0, text if isinstance(text, str) else "")
    text = text.strip()
    atoms, raw = _Parser(text).parse()
    # first pass: provisional aromatic bonds to find rings, then demote
    # implicit aromatic-aromatic bonds that lie outside any ring
    provisional = Molecule(atoms=atoms, bonds=_build_bonds(atoms, raw, None))
    ring_flags = perceive_rings(provisional).bond_in_ring
    mol = Molecule(atoms=atoms, bonds=_build_bonds(atoms, raw, ring_flags))
    if keep_largest:
        comps = mol.components()
        if len(comps) > 1:
            best = max(comps, key=len)  # max keeps the first among equals
            mol = mol.subgraph(best)
    return prepare(mol)
