"""ROC-AUC, RMSE and the metric report file."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ShapeError

log = logging.getLogger(__name__)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores: Sequence[float], labels: Sequence[float]) -> float | None:
    """Mann-Whitney AUC with ties counted as 1/2; None when a class is absent."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class AucResult:
    per_task: list[float | None]
    skipped: list[int] = field(default_factory=list)

    @property
    def macro(self) -> float | None:
        vals = [v for v in self.per_task if v is not None]
        return float(np.mean(vals)) if vals else None


def roc_auc(scores, labels, mask=None) -> AucResult:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.ndim == 1:
        s, y = s[:, None], y[:, None]
        mask = None if mask is None else np.asarray(mask)[:, None]
    if s.shape != y.shape:
        raise ShapeError(f"roc_auc: scores {s.shape} vs labels {y.shape}")
    m = np.ones_like(s, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    per_task, skipped = [], []
    for t in range(s.shape[1]):
        sel = m[:, t]
        auc = binary_auc(s[sel, t], y[sel, t])
        if auc is None:
            skipped.append(t)
            log.warning("task %d lacks a positive or negative example; excluded from the macro mean", t)
        per_task.append(auc)
    return AucResult(per_task, skipped)


def rmse(preds, targets, mask=None) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"rmse: predictions {p.shape} vs targets {t.shape}")
    if mask is not None:
        sel = np.asarray(mask, dtype=bool)
        p, t = p[sel], t[sel]
    if p.size == 0:
        raise ShapeError("rmse of an empty set")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass
class MetricRow:
    dataset: str
    split_seed: int
    metric: str
    value: float


def write_metric_report(path: str | Path, rows: Sequence[MetricRow], summary_metric: str | None = None) -> None:
    """``dataset,split_seed,metric,value`` rows plus mean and std summary rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "split_seed", "metric", "value"])
        for r in rows:
            w.writerow([r.dataset, r.split_seed, r.metric, repr(float(r.value))])
        for metric in sorted({r.metric for r in rows} if summary_metric is None else {summary_metric}):
            vals = [r.value for r in rows if r.metric == metric]
            if not vals:
                continue
            name = rows[0].dataset
            w.writerow([name, "mean", metric, repr(float(np.mean(vals)))])
            w.writerow([name, "std", metric, repr(float(np.std(vals)))])


@dataclass
class MetricReport:
    """One run's results: macro and per-task values per split plus run metadata."""

    dataset: str
    seed: int
    config_hash: str
    metric: str
    values: dict[str, float | None]
    per_task: dict[str, list[float | None]] = field(default_factory=dict)
    best_epoch: int = 0

    def __post_init__(self) -> None:
        for split, v in self.values.items():
            if v is None:
                continue
            if self.metric == "roc_auc" and not 0.0 <= v <= 1.0:
                raise ValueError(f"{split} roc_auc {v} outside [0, 1]")
            if self.metric == "rmse" and v < 0:
                raise ValueError(f"{split} rmse {v} is negative")

    def rows(self) -> list[MetricRow]:
        return [
            MetricRow(self.dataset, self.seed, f"{split}_{self.metric}", v)
            for split, v in self.values.items()
            if v is not None
        ]


def write_reports(path: str | Path, reports: Sequence[MetricReport]) -> None:
    """Rows for every split of every run; summary rows for the test metric."""
    rows = [r for rep in reports for r in rep.rows()]
    summary = f"test_{reports[0].metric}" if reports else None
    write_metric_report(path, rows, summary)
