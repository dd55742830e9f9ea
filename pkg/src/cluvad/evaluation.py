"""Precision/recall/F1 in point-wise and point-adjust protocols.

Point-adjust is the benchmark convention where hitting any point of a
contiguous true-anomaly segment counts the whole segment as detected;
reports always carry their protocol name so numbers from the two
conventions are never silently compared.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ParameterError
from .frame import LabelSeries

PROTOCOLS = ("pointwise", "point-adjust")


@dataclass
class EvalReport:
    """Confusion counts and derived metrics for one protocol."""

    precision: float
    recall: float
    f1: float
    protocol: str
    tp: int
    fp: int
    fn: int
    tn: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "precision": self.precision,
                "recall": self.recall,
                "f1": self.f1,
                "protocol": self.protocol,
                "tp": self.tp,
                "fp": self.fp,
                "fn": self.fn,
                "tn": self.tn,
            },
            sort_keys=True,
            indent=1,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def row(self) -> str:
        return (
            f"{self.protocol:>12}  P={self.precision:.4f}  R={self.recall:.4f}  "
            f"F1={self.f1:.4f}  (tp={self.tp} fp={self.fp} fn={self.fn} tn={self.tn})"
        )


def _as_bool(x) -> np.ndarray:
    if isinstance(x, LabelSeries):
        return x.values
    return np.asarray(x, dtype=bool)


def true_segments(truth: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous [start, end) runs of True in a boolean array."""
    truth = np.asarray(truth, dtype=bool)
    if truth.size == 0:
        return []
    edges = np.flatnonzero(np.diff(truth.astype(np.int8)))
    starts = list(edges[truth[edges + 1]] + 1)
    ends = list(edges[~truth[edges + 1]] + 1)
    if truth[0]:
        starts = [0] + starts
    if truth[-1]:
        ends = ends + [truth.size]
    return list(zip(starts, ends))


def adjust_predictions(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Expand predictions to full true segments (point-adjust rule)."""
    adjusted = pred.copy()
    for start, end in true_segments(truth):
        if adjusted[start:end].any():
            adjusted[start:end] = True
    return adjusted


def evaluate(pred, truth, protocol: str = "pointwise") -> EvalReport:
    """Confusion-count metrics between predicted and true labels.

    ``protocol="point-adjust"`` applies the segment-expansion rule to
    the predictions before counting; "pointwise" counts as-is.
    """
    p = _as_bool(pred)
    t = _as_bool(truth)
    if p.shape != t.shape:
        raise AlignmentError(f"prediction length {p.shape} != truth length {t.shape}")
    if protocol not in PROTOCOLS:
        raise ParameterError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    if protocol == "point-adjust":
        p = adjust_predictions(p, t)
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    tn = int(np.sum(~p & ~t))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(precision, recall, f1, protocol, tp, fp, fn, tn)
