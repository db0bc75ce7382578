"""Binary evaluation surface: confusion matrix, P/R/F1, ROC sweep, AUC.

The positive class is UNSTABLE throughout.  The confusion matrix is laid
out [actual x predicted] with the positive class first:

    [[TP, FN],
     [FP, TN]]

Zero-denominator precision/recall are reported as 0.0 with the affected
metric listed in ``flags`` so reports stay total.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .audio_dsp import Label
from .errors import DegenerateLabels, InputError

POSITIVE_CLASS = Label.UNSTABLE


@dataclass
class ClassificationScores:
    accuracy: float
    precision: float
    recall: float
    f1: float
    flags: tuple[str, ...] = ()

    def __iter__(self):
        return iter((self.accuracy, self.precision, self.recall, self.f1))


@dataclass
class EvalReport:
    """Everything one test-set evaluation produces."""

    confusion: np.ndarray  # 2x2 int [actual x predicted], positive first
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc: list[tuple[float, float, float]]  # (fpr, tpr, threshold)
    auc: float
    positive_class: str = POSITIVE_CLASS.value
    n_samples: int = 0
    flags: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "roc": [[float(a), float(b), float(c)] for a, b, c in self.roc],
            "auc": self.auc,
            "positive_class": self.positive_class,
            "n_samples": self.n_samples,
            "flags": list(self.flags),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            accuracy=d["accuracy"],
            precision=d["precision"],
            recall=d["recall"],
            f1=d["f1"],
            roc=[tuple(p) for p in d["roc"]],
            auc=d["auc"],
            positive_class=d["positive_class"],
            n_samples=d["n_samples"],
            flags=tuple(d.get("flags", ())),
            meta=d.get("meta", {}),
        )

    def roc_csv(self) -> str:
        lines = ["fpr,tpr,threshold"]
        lines += [f"{fpr:.17g},{tpr:.17g},{thr:.17g}" for fpr, tpr, thr in self.roc]
        return "\n".join(lines) + "\n"

    def markdown_row(self, model: str, phase: str) -> str:
        """One row in the shape of the per-phase comparison tables."""
        return (
            f"| {model} | {phase} | {self.accuracy:.2f} | {self.precision:.2f} "
            f"| {self.recall:.2f} | {self.f1:.2f} |"
        )


def _as_binary(labels) -> np.ndarray:
    arr = np.asarray([1 if _is_positive(v) else 0 for v in labels], dtype=np.int64)
    return arr


def _is_positive(v) -> bool:
    if isinstance(v, Label):
        return v is POSITIVE_CLASS
    if isinstance(v, str):
        return Label.from_string(v) is POSITIVE_CLASS
    return bool(int(v) == 1)


def confusion_matrix(labels, predictions) -> np.ndarray:
    """2x2 matrix [[TP, FN], [FP, TN]] with UNSTABLE as positive."""
    y = _as_binary(labels)
    p = _as_binary(predictions)
    if y.size != p.size:
        raise InputError(f"label/prediction length mismatch: {y.size} vs {p.size}")
    if y.size == 0:
        raise InputError("need at least one sample")
    tp = int(np.sum((y == 1) & (p == 1)))
    fn = int(np.sum((y == 1) & (p == 0)))
    fp = int(np.sum((y == 0) & (p == 1)))
    tn = int(np.sum((y == 0) & (p == 0)))
    return np.array([[tp, fn], [fp, tn]], dtype=np.int64)


def prf1(confusion) -> ClassificationScores:
    """Accuracy, precision, recall, F1 from a [[TP,FN],[FP,TN]] matrix."""
    m = np.asarray(confusion, dtype=np.int64)
    if m.shape != (2, 2) or np.any(m < 0):
        raise InputError("confusion matrix must be non-negative 2x2")
    tp, fn = int(m[0, 0]), int(m[0, 1])
    fp, tn = int(m[1, 0]), int(m[1, 1])
    n = tp + fn + fp + tn
    if n == 0:
        raise InputError("confusion matrix is all zero")

    flags = []
    accuracy = (tp + tn) / n
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("precision_zero_denominator")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall_zero_denominator")
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        flags.append("f1_zero_denominator")
    return ClassificationScores(accuracy, precision, recall, f1, tuple(flags))


def roc_curve(labels, scores) -> list[tuple[float, float, float]]:
    """Threshold sweep over descending unique scores.

    ``scores`` are positive-class probabilities in [0, 1].  A sample is
    predicted positive when score >= threshold.  The curve is anchored at
    (0, 0) and (1, 1).
    """
    y = _as_binary(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.size != s.size:
        raise InputError(f"label/score length mismatch: {y.size} vs {s.size}")
    if np.any((s < 0) | (s > 1)):
        raise InputError("scores must lie in [0, 1]")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("ROC needs both classes present")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # walk thresholds at each unique score; sentinel above max yields (0, 0)
    points: list[tuple[float, float, float]] = [(0.0, 0.0, float(s_sorted[0]) + 1.0)]
    tp = fp = 0
    i = 0
    n = s.size
    while i < n:
        thr = s_sorted[i]
        while i < n and s_sorted[i] == thr:
            if y_sorted[i] == 1:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append((fp / n_neg, tp / n_pos, float(thr)))
    if points[-1][:2] != (1.0, 1.0):
        points.append((1.0, 1.0, float(s_sorted[-1])))
    return points


def auc(roc: list[tuple[float, float, float]]) -> float:
    """Trapezoidal area under an ROC curve ordered by ascending fpr."""
    total = 0.0
    for (f0, t0, _), (f1, t1, _) in zip(roc[:-1], roc[1:]):
        total += (f1 - f0) * (t0 + t1) / 2.0
    return total


def evaluate_scores(labels, scores, threshold: float = 0.5) -> EvalReport:
    """Build a full EvalReport from positive-class scores.

    Classification uses score > threshold, which for binary softmax
    outputs at 0.5 coincides exactly with the argmax rule relied on in
    training (ties resolve to the lower class index, STABLE).
    """
    y = list(labels)
    s = np.asarray(scores, dtype=np.float64)
    preds = (s > threshold).astype(np.int64)
    conf = confusion_matrix(y, preds)
    scores_prf = prf1(conf)
    curve = roc_curve(y, s)
    return EvalReport(
        confusion=conf,
        accuracy=scores_prf.accuracy,
        precision=scores_prf.precision,
        recall=scores_prf.recall,
        f1=scores_prf.f1,
        roc=curve,
        auc=auc(curve),
        n_samples=int(s.size),
        flags=scores_prf.flags,
    )
