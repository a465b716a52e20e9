"""Classification and allocation-quality metrics."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


def capacity_gap(demands: np.ndarray, offered: np.ndarray) -> float:
    """Mean |demand - offered| over all samples and beams, in the demand units.

    ``demands`` and ``offered`` are (S, B) with rows aligned.
    """
    d = np.asarray(demands, dtype=np.float64)
    c = np.asarray(offered, dtype=np.float64)
    if d.shape != c.shape:
        raise ValueError(f"demand shape {d.shape} != offered shape {c.shape}")
    if d.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(d - c)))


def offered_capacities(predictions: Sequence[int], class_capacities: np.ndarray) -> np.ndarray:
    """(S,) class ids and a (Z, B) capacity table -> (S, B) offered capacity."""
    return np.asarray(class_capacities, dtype=np.float64)[np.asarray(predictions, dtype=np.int64)]


def confusion_matrix(labels, predictions, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


def roc_curve(positive: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-vs-rest ROC by sweeping the threshold over distinct score values.

    Returns (fpr, tpr) starting at (0, 0) and ending at (1, 1). Tied scores
    enter together, which makes the trapezoid area equal to the pairwise
    ranking probability with ties counted as one half.
    """
    positive = np.asarray(positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = positive.sum()
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative samples")
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], positive[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    return fpr, tpr


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    fpr, tpr = np.asarray(fpr), np.asarray(tpr)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray
    roc: dict[int, tuple[np.ndarray, np.ndarray]]
    auc: np.ndarray                         # NaN where a class is absent
    capacity_gap: float | None = None       # bps
    latency: float | None = None            # seconds per example
    ops_per_example: float | None = None    # synops (SNN) or MACs (CNN)
    split_id: str = ""
    predictions: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def summary(self) -> dict:
        return {"accuracy": self.accuracy,
                "macro_f1": float(np.mean(self.f1)),
                "capacity_gap_bps": self.capacity_gap,
                "latency_s": self.latency,
                "ops_per_example": self.ops_per_example}


def split_id(indices: Sequence[int]) -> str:
    """Short fingerprint of a sample split, used to check reports line up."""
    a = np.ascontiguousarray(np.asarray(indices, dtype="<i8"))
    return hashlib.sha256(a.tobytes()).hexdigest()[:16]


def classification_report(labels, scores, n_classes: int | None = None, *,
                          split: Sequence[int] | None = None) -> MetricsReport:
    """Metrics from true labels and per-class scores (S, Z).

    Predictions are the first maximal score per row.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise ValueError("scores must be (n_samples, n_classes) aligned with labels")
    Z = n_classes if n_classes is not None else scores.shape[1]
    pred = np.argmax(scores, axis=1)
    cm = confusion_matrix(labels, pred, Z)
    tp = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, tp / col, 0.0)
        recall = np.where(row > 0, tp / row, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    roc, auc = {}, np.full(Z, np.nan)
    for k in range(Z):
        pos = labels == k
        if 0 < pos.sum() < len(labels):
            fpr, tpr = roc_curve(pos, scores[:, k])
            roc[k] = (fpr, tpr)
            auc[k] = trapezoid_auc(fpr, tpr)
    acc = float(np.trace(cm) / cm.sum()) if cm.sum() else float("nan")
    return MetricsReport(acc, precision, recall, f1, row.astype(np.int64), cm, roc, auc,
                         split_id=split_id(split) if split is not None else "",
                         predictions=pred)


# --- model comparison ----------------------------------------------------------

COMPARE_FIELDS = ("metric", "snn", "cnn", "value")


def compare_models(snn: MetricsReport, cnn: MetricsReport) -> list[dict]:
    """Side-by-side rows; ratios are CNN over SNN."""
    if snn.split_id != cnn.split_id:
        raise ValueError("reports were computed on different splits")

    def ratio(a, b):
        if a is None or b is None or b == 0:
            return float("nan")
        return a / b

    return [
        {"metric": "accuracy_delta", "snn": snn.accuracy, "cnn": cnn.accuracy,
         "value": snn.accuracy - cnn.accuracy},
        {"metric": "latency_ratio", "snn": _num(snn.latency), "cnn": _num(cnn.latency),
         "value": ratio(cnn.latency, snn.latency)},
        {"metric": "operations_ratio", "snn": _num(snn.ops_per_example),
         "cnn": _num(cnn.ops_per_example),
         "value": ratio(cnn.ops_per_example, snn.ops_per_example)},
    ]


def _num(v):
    return float("nan") if v is None else float(v)


def write_table(path: str | Path, rows: list[dict], fields: Sequence[str] | None = None):
    fields = list(fields or rows[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for r in rows:
            # repr keeps every bit of a float, so reading back is exact
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for k, v in r.items()})


def read_table(path: str | Path) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            out.append({k: _parse(v) for k, v in r.items()})
    return out


def _parse(v: str):
    try:
        if v.lstrip("-").isdigit():
            return int(v)
        return float(v)
    except ValueError:
        return v


def isclose_rows(a: list[dict], b: list[dict]) -> bool:
    """Exact equality with NaN == NaN."""
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if ra.keys() != rb.keys():
            return False
        for k in ra:
            x, y = ra[k], rb[k]
            if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
                continue
            if x != y:
                return False
    return True
