"""Classification metrics over per-clip predictions.

Accuracy, per-class precision/recall/F1, the confusion matrix (rows = true
class, columns = predicted class) and sparse categorical cross-entropy with
the natural log.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import ClassLabel

N_CLASSES = len(ClassLabel)
PROB_FLOOR = 1e-12
PREDICTION_HEADER = ("clip_id", "true_label", "pred_label", "p0", "p1", "p2")


@dataclass(frozen=True)
class PredictionRecord:
    clip_id: str
    true_label: ClassLabel
    pred_label: ClassLabel
    probs: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "true_label", ClassLabel.parse(self.true_label))
        object.__setattr__(self, "pred_label", ClassLabel.parse(self.pred_label))
        if self.probs is None:
            return
        probs = tuple(float(p) for p in self.probs)
        if len(probs) != N_CLASSES:
            raise ValueError(f"{self.clip_id}: expected {N_CLASSES} probabilities, got {len(probs)}")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-6:
            raise ValueError(f"{self.clip_id}: probabilities {probs} are not a distribution")
        # max() returns the first maximal index, i.e. lowest class wins ties
        top = max(range(N_CLASSES), key=lambda k: probs[k])
        if top != int(self.pred_label):
            raise ValueError(
                f"{self.clip_id}: pred_label {self.pred_label.name} is not the argmax of {probs}"
            )
        object.__setattr__(self, "probs", probs)


def _require(records: Sequence[PredictionRecord]) -> None:
    if not records:
        raise ValueError("no prediction records")


def accuracy(records: Sequence[PredictionRecord]) -> float:
    _require(records)
    return sum(r.true_label == r.pred_label for r in records) / len(records)


def confusion_matrix(records: Sequence[PredictionRecord]) -> np.ndarray:
    _require(records)
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for r in records:
        cm[int(r.true_label), int(r.pred_label)] += 1
    return cm


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ClassMetrics:
    label: ClassLabel
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    # names of ratios whose denominator was zero and were reported as 0
    degenerate: tuple[str, ...] = ()

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def accuracy(self) -> float:
        """Class-wise accuracy in the sense of a per-class results table: the
        fraction of this class's clips labelled correctly, i.e. recall."""
        return self.recall

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "support": self.support,
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1, "degenerate": list(self.degenerate),
        }


def class_metrics_from_confusion(cm: np.ndarray) -> dict[ClassLabel, ClassMetrics]:
    out = {}
    for lab in ClassLabel:
        k = int(lab)
        tp = int(cm[k, k])
        fp = int(cm[:, k].sum()) - tp
        fn = int(cm[k, :].sum()) - tp
        degenerate = []
        if tp + fp == 0:
            precision = 0.0
            degenerate.append("precision")
        else:
            precision = tp / (tp + fp)
        if tp + fn == 0:
            recall = 0.0
            degenerate.append("recall")
        else:
            recall = tp / (tp + fn)
        if precision + recall == 0:
            degenerate.append("f1")
        out[lab] = ClassMetrics(lab, tp, fp, fn, precision, recall, f1_score(precision, recall), tuple(degenerate))
    return out


def per_class_prf(records: Sequence[PredictionRecord]) -> dict[ClassLabel, ClassMetrics]:
    return class_metrics_from_confusion(confusion_matrix(records))


def _nll_sum(records: Iterable[PredictionRecord]) -> tuple[float, int]:
    total, n = 0.0, 0
    for r in records:
        if r.probs is None:
            raise ValueError(f"{r.clip_id}: no class probabilities for the loss")
        total -= math.log(max(r.probs[int(r.true_label)], PROB_FLOOR))
        n += 1
    return total, n


def sparse_cce(records: Sequence[PredictionRecord]) -> float:
    """Mean negative natural log of the probability given to the true class."""
    _require(records)
    total, n = _nll_sum(records)
    return total / n


@dataclass
class MetricsReport:
    n: int
    confusion: np.ndarray
    per_class: dict[ClassLabel, ClassMetrics]
    loss: Optional[float] = None
    notes: list[str] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion)) / self.n

    def macro(self) -> dict[str, float]:
        m = list(self.per_class.values())
        return {
            "precision": sum(c.precision for c in m) / len(m),
            "recall": sum(c.recall for c in m) / len(m),
            "f1": sum(c.f1 for c in m) / len(m),
        }

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "loss": self.loss,
            "macro": self.macro(),
            "per_class": {lab.name: cm.to_dict() for lab, cm in self.per_class.items()},
            "confusion": {
                "labels": [lab.name for lab in ClassLabel],
                "matrix": self.confusion.tolist(),
            },
            "notes": list(self.notes),
        }

    def to_text(self) -> str:
        lines = [f"{'class':<14}{'accuracy':>10}{'precision':>11}{'recall':>9}{'f1':>8}{'support':>9}"]
        for lab, c in self.per_class.items():
            flag = "  *" if c.degenerate else ""
            lines.append(f"{lab.name:<14}{c.accuracy:>10.4f}{c.precision:>11.4f}{c.recall:>9.4f}"
                         f"{c.f1:>8.4f}{c.support:>9d}{flag}")
        mac = self.macro()
        lines.append(f"{'macro avg':<14}{'':>10}{mac['precision']:>11.4f}{mac['recall']:>9.4f}{mac['f1']:>8.4f}{self.n:>9d}")
        lines.append(f"accuracy {self.accuracy:.4f}  n={self.n}")
        lines.append("loss " + ("n/a" if self.loss is None else f"{self.loss:.6f}"))
        lines.append("confusion (rows true, cols predicted): " + " ".join(lab.name for lab in ClassLabel))
        for lab in ClassLabel:
            lines.append(f"  {lab.name:<12}" + " ".join(f"{v:>5d}" for v in self.confusion[int(lab)]))
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"


_ACCURACY_NOTE = "class-wise accuracy equals per-class recall"


def evaluate(records: Sequence[PredictionRecord]) -> MetricsReport:
    _require(records)
    cm = confusion_matrix(records)
    loss = sparse_cce(records) if all(r.probs is not None for r in records) else None
    return _report(len(records), cm, loss)


def _report(n: int, cm: np.ndarray, loss: Optional[float]) -> MetricsReport:
    notes = [_ACCURACY_NOTE]
    if loss is None:
        notes.append("loss omitted: some records carry no probabilities")
    per_class = class_metrics_from_confusion(cm)
    if any(c.degenerate for c in per_class.values()):
        notes.append("* zero-denominator ratio reported as 0")
    return MetricsReport(n, cm, per_class, loss, notes)


def merge_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Combine reports computed over disjoint shards of the records."""
    if not reports:
        raise ValueError("nothing to merge")
    cm = sum((r.confusion for r in reports), np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))
    n = sum(r.n for r in reports)
    loss = None
    if all(r.loss is not None for r in reports):
        loss = sum(r.loss * r.n for r in reports) / n
    return _report(n, cm, loss)


def read_predictions(path: Path) -> list[PredictionRecord]:
    """Parse ``clip_id,true_label,pred_label,p0,p1,p2`` rows after a header line.

    Labels may be names or integer codes; the probability columns may be
    left empty on every row of a file without scores.
    """
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header[:3]) != PREDICTION_HEADER[:3]:
            raise ValueError(f"{path}: expected header {','.join(PREDICTION_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row or not "".join(row).strip():
                continue
            try:
                cells = [c.strip() for c in row]
                if len(cells) not in (3, 6):
                    raise ValueError(f"expected 3 or 6 fields, got {len(cells)}")
                probs = None
                if len(cells) == 6 and any(cells[3:]):
                    probs = tuple(float(c) for c in cells[3:])
                records.append(PredictionRecord(cells[0], cells[1], cells[2], probs))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return records


def format_predictions(records: Sequence[PredictionRecord]) -> str:
    lines = [",".join(PREDICTION_HEADER)]
    for r in records:
        probs = [repr(p) for p in r.probs] if r.probs is not None else ["", "", ""]
        lines.append(",".join([r.clip_id, r.true_label.name, r.pred_label.name, *probs]))
    return "\n".join(lines) + "\n"
