"""Dataset tables, split protocols and the bundled benchmark files."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff.rng import make_rng
from .chem import Molecule, SmilesError, murcko_key, parse_smiles
from .errors import DataError

log = logging.getLogger(__name__)

BUNDLED = {"bace": "bace.csv", "esol": "esol.csv", "zinc_micro": "zinc_micro.csv"}


@dataclass
class DatasetTable:
    ids: list[str]
    smiles: list[str]
    molecules: list[Molecule]
    task_names: list[str]
    labels: np.ndarray  # (N, T); 0.0 where missing
    mask: np.ndarray  # (N, T) bool, True where observed
    texts: list[str | None] = field(default_factory=list)
    dropped: int = 0

    def __post_init__(self) -> None:
        if not self.texts:
            self.texts = [None] * len(self.ids)
        if len(set(self.ids)) != len(self.ids):
            raise DataError("dataset ids are not unique")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_tasks(self) -> int:
        return len(self.task_names)

    def subset(self, index: Sequence[int]) -> "DatasetTable":
        idx = list(index)
        return DatasetTable(
            [self.ids[i] for i in idx],
            [self.smiles[i] for i in idx],
            [self.molecules[i] for i in idx],
            list(self.task_names),
            self.labels[idx],
            self.mask[idx],
            [self.texts[i] for i in idx],
        )

    def check_binary(self) -> None:
        vals = self.labels[self.mask]
        if not np.isin(vals, (0.0, 1.0)).all():
            raise DataError("classification labels must be 0 or 1 where present")

    def attach_texts(self, path: str | Path) -> int:
        """Merge a JSON-lines ``{"id", "text"}`` sidecar; returns how many rows received text."""
        where = {ident: i for i, ident in enumerate(self.ids)}
        hits = 0
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    ident, text = str(obj["id"]), obj["text"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: expected an object with 'id' and 'text' ({exc})") from None
                if ident in where:
                    self.texts[where[ident]] = str(text)
                    hits += 1
        return hits


def _parse_label(cell: str, where: str) -> float | None:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"{where}: label {cell!r} is not numeric") from None
    if not math.isfinite(value):
        raise DataError(f"{where}: label {cell!r} is not finite")
    return value


def load_dataset(
    path: str | Path,
    text_path: str | Path | None = None,
    tasks: Sequence[str] | None = None,
    require_labels: bool = True,
) -> DatasetTable:
    """Read a dataset CSV (``smiles`` required; ``id``/``text`` optional; other columns are tasks).

    Unlabeled corpora (pretraining) pass ``require_labels=False`` and get a zero-width label matrix.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "smiles" not in header:
            raise DataError(f"{path}: missing required 'smiles' column")
        task_names = list(tasks) if tasks else [c for c in header if c not in ("smiles", "id", "text")]
        missing = [t for t in task_names if t not in header]
        if missing:
            raise DataError(f"{path}: task columns not found: {missing}")
        if not task_names and require_labels:
            raise DataError(f"{path}: no label columns")
        ids, smiles, mols, texts, labels, masks = [], [], [], [], [], []
        dropped = 0
        for ordinal, row in enumerate(reader):
            try:
                mol = parse_smiles(row["smiles"])
            except SmilesError as exc:
                dropped += 1
                log.debug("dropping row %d: %s", ordinal, exc)
                continue
            if mol.n_atoms == 0:
                dropped += 1
                continue
            where = f"{path.name} row {ordinal + 1}"
            vals = [_parse_label(row.get(t) or "", where) for t in task_names]
            ids.append(row["id"] if row.get("id") else str(ordinal))
            smiles.append(row["smiles"])
            mols.append(mol)
            text = row.get("text")
            texts.append(text if text else None)
            labels.append([0.0 if v is None else v for v in vals])
            masks.append([v is not None for v in vals])
    if dropped:
        log.info("%s: dropped %d unparseable SMILES rows", path.name, dropped)
    if not ids:
        raise DataError(f"{path}: no valid rows")
    n_tasks = len(task_names)
    table = DatasetTable(
        ids,
        smiles,
        mols,
        task_names,
        np.array(labels, dtype=np.float64).reshape(len(ids), n_tasks),
        np.array(masks, dtype=bool).reshape(len(ids), n_tasks),
        texts,
        dropped,
    )
    if text_path is not None:
        table.attach_texts(text_path)
    return table


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise DataError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    return Path(str(resources.files("lgmcl") / "data" / BUNDLED[name]))


def resolve_dataset_path(spec: str) -> Path:
    """``bundled:<name>`` or a filesystem path."""
    if spec.startswith("bundled:"):
        return bundled_path(spec.split(":", 1)[1])
    return Path(spec)


# -- splits ------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    kind: str = "random"
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("random", "scaffold"):
            raise DataError(f"unknown split kind {self.kind!r}")
        if abs(sum(self.fractions) - 1.0) > 1e-9 or min(self.fractions) < 0:
            raise DataError(f"split fractions {self.fractions} must be non-negative and sum to 1")


@dataclass
class Split:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"train": self.train, "valid": self.valid, "test": self.test}


def _cuts(n: int, fractions: Sequence[float]) -> tuple[int, int]:
    return math.floor(fractions[0] * n), math.floor((fractions[0] + fractions[1]) * n)


def random_split(n_or_table, spec: SplitSpec) -> Split:
    n = n_or_table if isinstance(n_or_table, int) else len(n_or_table)
    if n < 5:
        raise DataError(f"need at least 5 rows to split, got {n}")
    order = make_rng(spec.seed, "split", "random").permutation(n)
    a, b = _cuts(n, spec.fractions)
    return Split(np.sort(order[:a]), np.sort(order[a:b]), np.sort(order[b:]))


def scaffold_groups(keys: Sequence[str]) -> list[list[int]]:
    groups: dict[str, list[int]] = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    return [groups[k] for k in sorted(groups, key=lambda k: (-len(groups[k]), k))]


def scaffold_split(table_or_keys, spec: SplitSpec) -> Split:
    """Largest scaffold groups fill train, then valid; groups never straddle splits."""
    if isinstance(table_or_keys, DatasetTable):
        keys = [murcko_key(m) for m in table_or_keys.molecules]
    else:
        keys = list(table_or_keys)
    n = len(keys)
    if n < 5:
        raise DataError(f"need at least 5 rows to split, got {n}")
    train_cut = spec.fractions[0] * n
    valid_cut = (spec.fractions[0] + spec.fractions[1]) * n
    train, valid, test = [], [], []
    for group in scaffold_groups(keys):
        if len(train) < train_cut:
            train.extend(group)
        elif len(train) + len(valid) < valid_cut:
            valid.extend(group)
        else:
            test.extend(group)
    return Split(*(np.array(sorted(s), dtype=np.int64) for s in (train, valid, test)))


def make_split(table: DatasetTable, spec: SplitSpec) -> Split:
    return random_split(table, spec) if spec.kind == "random" else scaffold_split(table, spec)
