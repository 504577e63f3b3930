"""Agreement metrics between reference and predicted hypnograms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyMatrix, LabelOutOfRange, LengthMismatch
from .pipeline import EPOCH_SECONDS, STAGE_NAMES

N_CLASSES = 5


def confusion(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true stage, columns = predicted stage."""
    t = np.asarray(y_true, dtype=np.int64).ravel()
    p = np.asarray(y_pred, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.size} true labels vs {p.size} predictions")
    for arr in (t, p):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"labels must lie in 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass
class ClassReport:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    per_class: list[ClassReport]
    micro: ClassReport
    macro: ClassReport
    weighted: ClassReport
    accuracy: float
    kappa: float
    names: list[str] = field(default_factory=lambda: list(STAGE_NAMES))
    degenerate: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        row = lambda r: {"precision": r.precision, "recall": r.recall, "f1": r.f1,  # noqa: E731
                         "support": r.support}
        return {
            "classes": {n: row(r) for n, r in zip(self.names, self.per_class)},
            "micro_avg": row(self.micro),
            "macro_avg": row(self.macro),
            "weighted_avg": row(self.weighted),
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "degenerate": self.degenerate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render(self, digits: int = 4) -> str:
        """Text table laid out like a classification report."""
        f = f"{{:.{digits}f}}"
        lines = [f"{'Label':<6}{'Stage':<10}{'Precision':>11}{'Recall':>11}{'F1-score':>11}{'Support':>9}"]
        for i, (n, r) in enumerate(zip(self.names, self.per_class)):
            lines.append(f"{i:<6}{n:<10}{f.format(r.precision):>11}{f.format(r.recall):>11}"
                         f"{f.format(r.f1):>11}{r.support:>9}")
        lines.append("")
        for label, r in (("Micro", self.micro), ("Macro", self.macro), ("Weighted", self.weighted)):
            lines.append(f"{label:<16}{f.format(r.precision):>11}{f.format(r.recall):>11}"
                         f"{f.format(r.f1):>11}{r.support:>9}")
        lines.append(f"accuracy {f.format(self.accuracy)}  kappa {f.format(self.kappa)}")
        return "\n".join(lines)


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def kappa(cm) -> float:
    """Cohen's kappa from a confusion matrix; 0 when chance agreement is 1."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise EmptyMatrix("confusion matrix is empty")
    p_o = np.trace(cm) / total
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum() / (total * total))
    if p_e == 1:
        return 0.0
    return float((p_o - p_e) / (1 - p_e))


def report(cm, names=None) -> ClassificationReport:
    """Per-class precision/recall/F1/support and micro/macro/weighted averages.

    Zero denominators give 0 and the class is listed in ``degenerate``.
    """
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total <= 0:
        raise EmptyMatrix("confusion matrix is empty")
    k = cm.shape[0]
    names = list(names) if names is not None else (list(STAGE_NAMES) if k == N_CLASSES else [str(i) for i in range(k)])
    diag = np.diag(cm)
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    per_class = []
    degenerate = []
    for i in range(k):
        p = diag[i] / col[i] if col[i] else 0.0
        r = diag[i] / row[i] if row[i] else 0.0
        if not col[i] or not row[i]:
            degenerate.append(names[i])
        per_class.append(ClassReport(float(p), float(r), _f1(p, r), int(row[i])))
    tp = int(diag.sum())
    # pooled counts: sum of FP == sum of FN == total - tp
    micro_p = tp / total
    micro_r = tp / total
    micro = ClassReport(micro_p, micro_r, _f1(micro_p, micro_r), total)
    macro = ClassReport(
        float(np.mean([c.precision for c in per_class])),
        float(np.mean([c.recall for c in per_class])),
        float(np.mean([c.f1 for c in per_class])),
        total,
    )
    w = row / total
    weighted = ClassReport(
        float(sum(wi * c.precision for wi, c in zip(w, per_class))),
        tp / total,  # support-weighted recall telescopes to accuracy
        float(sum(wi * c.f1 for wi, c in zip(w, per_class))),
        total,
    )
    return ClassificationReport(per_class, micro, macro, weighted, tp / total, kappa(cm), names, degenerate)


def write_confusion_csv(path, cm, names=None) -> None:
    cm = np.asarray(cm)
    names = list(names) if names is not None else list(STAGE_NAMES)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + names)
        for n, row in zip(names, cm):
            w.writerow([n] + [int(v) for v in row])


def read_confusion_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)


HYPNOGRAM_FIELDS = ["epoch_index", "time_s", "true_stage", "predicted_stage", "confidence"]


def hypnogram_export(labels, predictions, path, confidence=None, epoch_index=None) -> None:
    """Write epoch_index, time_s, true_stage, predicted_stage, confidence rows.

    ``labels`` entries may be ``None`` (unknown reference), written as empty.
    """
    preds = list(np.asarray(predictions).ravel())
    labels = list(labels) if labels is not None else [None] * len(preds)
    if len(labels) != len(preds):
        raise LengthMismatch(f"{len(labels)} labels vs {len(preds)} predictions")
    conf = list(np.asarray(confidence).ravel()) if confidence is not None else [None] * len(preds)
    idx = list(epoch_index) if epoch_index is not None else list(range(len(preds)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HYPNOGRAM_FIELDS)
        for i, t, p, c in zip(idx, labels, preds, conf):
            w.writerow([int(i), int(i) * EPOCH_SECONDS, "" if t is None else int(t), int(p),
                        "" if c is None else f"{float(c):.6f}"])


def read_hypnogram(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({
            "epoch_index": int(r["epoch_index"]),
            "time_s": int(r["time_s"]),
            "true_stage": int(r["true_stage"]) if r["true_stage"] != "" else None,
            "predicted_stage": int(r["predicted_stage"]),
            "confidence": float(r["confidence"]) if r["confidence"] != "" else None,
        })
    return out


def save_report(path, rep: ClassificationReport) -> None:
    Path(path).write_text(rep.to_json() + "\n")
