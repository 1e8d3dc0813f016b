"""Precision/recall, PR curves, AUPR, average precision and MSE.

Rankings are deterministic: descending score, ties broken by ascending id.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

REPORT_HEADER = ["year", "model", "metric", "value"]


class MetricError(ValueError):
    pass


class Confusion(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def degenerate(self) -> bool:
        """True when precision or recall fell back to the zero convention."""
        return self.tp + self.fp == 0 or self.tp + self.fn == 0


def confusion_counts(labels, predictions) -> Confusion:
    labels = np.asarray(labels).astype(bool)
    preds = np.asarray(predictions).astype(bool)
    if labels.shape != preds.shape:
        raise MetricError(f"length mismatch: {labels.shape} vs {preds.shape}")
    c = Confusion(int(np.sum(labels & preds)), int(np.sum(~labels & preds)),
                  int(np.sum(~labels & ~preds)), int(np.sum(labels & ~preds)))
    if c.degenerate:
        log.debug("zero denominator in precision/recall: %s", c)
    return c


@dataclass(frozen=True)
class RankedPredictions:
    scores: np.ndarray
    labels: np.ndarray
    ids: tuple

    @classmethod
    def from_scores(cls, scores, labels, ids: Sequence | None = None) -> "RankedPredictions":
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if scores.shape != labels.shape or scores.ndim != 1:
            raise MetricError(f"scores {scores.shape} and labels {labels.shape} must be equal 1-D")
        ids = tuple(ids) if ids is not None else tuple(range(len(scores)))
        if len(ids) != len(scores):
            raise MetricError("ids length mismatch")
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))
        return cls(scores[order], labels[order], tuple(ids[i] for i in order))

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())


def _ranked(ranked_or_scores, labels=None, ids=None) -> RankedPredictions:
    if isinstance(ranked_or_scores, RankedPredictions):
        return ranked_or_scores
    return RankedPredictions.from_scores(ranked_or_scores, labels, ids)


def pr_curve(ranked, labels=None, ids=None) -> list[tuple[float, float]]:
    """(recall, precision) after each rank prefix."""
    r = _ranked(ranked, labels, ids)
    pos = r.n_positive
    if pos == 0:
        raise MetricError("precision-recall curve needs at least one positive label")
    tp = np.cumsum(r.labels)
    k = np.arange(1, len(r.labels) + 1)
    return list(zip((tp / pos).tolist(), (tp / k).tolist()))


def average_precision(ranked, labels=None, ids=None) -> float:
    """sum_n (R_n - R_{n-1}) * P_n over prefix points."""
    pts = pr_curve(ranked, labels, ids)
    total, prev = 0.0, 0.0
    for rec, prec in pts:
        total += (rec - prev) * prec
        prev = rec
    return total


def aupr(ranked, labels=None, ids=None) -> float:
    """Trapezoidal area under the PR points, starting from (0, first precision)."""
    pts = pr_curve(ranked, labels, ids)
    rec = np.array([0.0] + [p[0] for p in pts])
    prec = np.array([pts[0][1]] + [p[1] for p in pts])
    return float(np.sum(np.diff(rec) * (prec[1:] + prec[:-1]) / 2.0))


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise MetricError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise MetricError("mse of empty input")
    return float(np.mean((p - t) ** 2))


def write_report(rows, path) -> None:
    """rows: iterable of (year, model, metric, value), written in the given order."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(REPORT_HEADER) + "\n")
        for year, model, metric, value in rows:
            fh.write(f"{year}\t{model}\t{metric}\t{format_value(value)}\n")


def read_report(path) -> list[tuple]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh, delimiter="\t")
        header = next(rows, None)
        if header != REPORT_HEADER:
            raise MetricError(f"{path}: expected header {REPORT_HEADER}, got {header}")
        return [(int(y), m, k, float(v)) for y, m, k, v in rows]


def format_value(v) -> str:
    return f"{float(v):.10g}"
