"""Hashed circular fingerprints and external fingerprint sidecar files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chem.molecule import Molecule
from .errors import ConfigError, FingerprintError

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1

HEADER_TAG = "#fp-v1"


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def _atom_invariant(mol: Molecule, i: int) -> tuple:
    a = mol.atoms[i]
    in_ring = bool(mol.rings.atom_in_ring[i]) if mol.rings else False
    return (a.element, mol.degree(i), mol.total_h(i), a.formal_charge, int(a.aromatic), int(in_ring))


def _hash_tuple(t: tuple) -> int:
    return fnv1a_64(repr(t).encode("utf-8"))


def atom_environments(mol: Molecule, radius: int = 2) -> list[list[int]]:
    """Per-radius identifier lists: ``out[r][i]`` identifies the r-hop environment of atom i."""
    ids = [_hash_tuple(("r0",) + _atom_invariant(mol, i)) for i in range(mol.n_atoms)]
    out = [ids]
    for r in range(1, radius + 1):
        prev = out[-1]
        nxt = []
        for i in range(mol.n_atoms):
            nbrs = sorted((prev[j], int(mol.bonds[b].order)) for j, b in mol.adjacency[i])
            nxt.append(_hash_tuple((r, prev[i], tuple(nbrs))))
        out.append(nxt)
    return out


def circular_fingerprint(mol: Molecule, radius: int = 2, n_bits: int = 2048) -> np.ndarray:
    """Binary vector with one bit per (atom, radius) environment identifier."""
    if n_bits < 1 or radius < 0:
        raise ValueError("n_bits must be positive and radius non-negative")
    bits = np.zeros(n_bits, dtype=np.float64)
    for layer in atom_environments(mol, radius):
        for ident in layer:
            bits[ident % n_bits] = 1.0
    return bits


@dataclass
class ExternalFingerprints:
    name: str
    length: int
    binary: bool
    vectors: dict[str, np.ndarray]

    def lookup(self, ids: Iterable[str]) -> np.ndarray:
        rows = []
        for i in ids:
            if i not in self.vectors:
                raise FingerprintError(f"fingerprint file {self.name!r} has no entry for id {i!r}")
            rows.append(self.vectors[i])
        return np.stack(rows) if rows else np.zeros((0, self.length))


def load_external_fingerprints(path: str | Path, required_ids: Sequence[str] | None = None) -> ExternalFingerprints:
    """Read a ``#fp-v1`` sidecar; ``required_ids`` triggers the missing-id check eagerly."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    header = lines[0].split()
    if len(header) != 4 or header[0] != HEADER_TAG or header[3] not in ("binary", "real"):
        raise FingerprintError(f"{path}: bad header {lines[0]!r}, expected '{HEADER_TAG} <name> <length> <binary|real>'")
    name, binary = header[1], header[3] == "binary"
    try:
        length = int(header[2])
    except ValueError:
        raise FingerprintError(f"{path}: declared length {header[2]!r} is not an integer") from None
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if "\t" not in line:
            raise FingerprintError(f"{path}:{lineno}: expected id<TAB>vector")
        ident, payload = line.split("\t", 1)
        if binary:
            if set(payload) - {"0", "1"}:
                raise FingerprintError(f"{path}:{lineno}: non-binary entry in binary file for id {ident!r}")
            vec = np.frombuffer(payload.encode("ascii"), dtype=np.uint8) - ord("0")
            vec = vec.astype(np.float64)
        else:
            try:
                vec = np.array([float(x) for x in payload.split(",")], dtype=np.float64)
            except ValueError:
                raise FingerprintError(f"{path}:{lineno}: unparseable real entry for id {ident!r}") from None
        if vec.shape[0] != length:
            raise FingerprintError(
                f"{path}:{lineno}: length mismatch for id {ident!r}: got {vec.shape[0]}, declared {length}"
            )
        if ident in vectors:
            raise FingerprintError(f"{path}:{lineno}: duplicate id {ident!r}")
        vectors[ident] = vec
    fps = ExternalFingerprints(name, length, binary, vectors)
    if required_ids is not None:
        fps.lookup(required_ids)
    return fps


def write_fingerprints(path: str | Path, name: str, ids: Sequence[str], matrix: np.ndarray, binary: bool = True) -> None:
    kind = "binary" if binary else "real"
    out = [f"{HEADER_TAG} {name} {matrix.shape[1]} {kind}"]
    for ident, row in zip(ids, matrix):
        if binary:
            out.append(ident + "\t" + "".join("1" if v else "0" for v in row))
        else:
            out.append(ident + "\t" + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class FingerprintSource:
    """``kind`` is ``builtin`` (radius/n_bits used) or ``external`` (path used)."""

    kind: str
    radius: int = 2
    n_bits: int = 2048
    path: str | None = None

    @classmethod
    def parse(cls, spec: str, radius: int = 2, n_bits: int = 2048) -> "FingerprintSource":
        spec = spec.strip()
        if spec == "builtin":
            return cls("builtin", radius=radius, n_bits=n_bits)
        if spec.startswith("external:"):
            return cls("external", path=spec.split(":", 1)[1])
        raise ConfigError(f"unknown fingerprint source {spec!r}; use 'builtin' or 'external:<path>'")


def fingerprint_block(
    ids: Sequence[str], mols: Sequence[Molecule], sources: Sequence[FingerprintSource]
) -> np.ndarray:
    """Concatenate every configured source, in order, into an N x F matrix."""
    if not sources:
        raise ConfigError("fingerprint modality enabled but no fingerprint source configured")
    blocks = []
    for src in sources:
        if src.kind == "builtin":
            blocks.append(
                np.stack([circular_fingerprint(m, src.radius, src.n_bits) for m in mols])
                if mols
                else np.zeros((0, src.n_bits))
            )
        elif src.kind == "external":
            if not src.path:
                raise ConfigError("external fingerprint source needs a path")
            blocks.append(load_external_fingerprints(src.path).lookup(ids))
        else:
            raise ConfigError(f"unknown fingerprint source kind {src.kind!r}")
    return np.concatenate(blocks, axis=1)
