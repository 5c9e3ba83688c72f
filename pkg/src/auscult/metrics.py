"""Dataset splitting and the evaluation protocol.

Two score groups are reported per task:
  micro: sensitivity (pooled recall over the non-normal classes),
         specificity (recall of the normal/healthy class), and their mean;
  macro: accuracy (mean per-class recall), precision, recall, F1 as
         unweighted means over classes.

Undefined values (zero denominators) are surfaced as explicit flags, never
silently zeroed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "EmptyClassError",
    "LengthMismatchError",
    "LabelOutOfRangeError",
    "ZeroDenominatorError",
    "Task",
    "ConfusionMatrix",
    "IcbhiScores",
    "MacroScores",
    "MetricsReport",
    "split",
    "confusion",
    "icbhi_micro",
    "macro",
    "report",
    "collapse_anomaly",
]


class EmptyClassError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


class LabelOutOfRangeError(ValueError):
    pass


class ZeroDenominatorError(ZeroDivisionError):
    pass


class Task(Enum):
    """Classification task; class index 0 is always the normal/healthy class."""

    ANOMALY2 = "anomaly2"
    ANOMALY4 = "anomaly4"
    PATHO2 = "patho2"
    PATHO3 = "patho3"

    @property
    def class_names(self) -> tuple[str, ...]:
        return _TASK_CLASSES[self]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def is_pathology(self) -> bool:
        return self in (Task.PATHO2, Task.PATHO3)

    @classmethod
    def parse(cls, name: str) -> "Task":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown task {name!r}; expected one of {[t.value for t in cls]}"
            ) from None


_TASK_CLASSES = {
    Task.ANOMALY2: ("normal", "abnormal"),
    Task.ANOMALY4: ("normal", "crackles", "wheezes", "both"),
    Task.PATHO2: ("healthy", "unhealthy"),
    Task.PATHO3: ("healthy", "chronic", "non_chronic"),
}

_NORMAL = 0  # index of the normal/healthy class in every task


@dataclass
class ConfusionMatrix:
    """counts[true][pred]; row sums are per-class totals N_c, the diagonal the
    correctly recognized counts C_c."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.class_names)
        if self.counts.shape != (n, n):
            raise ValueError("counts must be (n_classes, n_classes)")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_names != self.class_names:
            raise ValueError("cannot merge matrices over different class sets")
        return ConfusionMatrix(self.counts + other.counts, self.class_names)


def confusion(preds, truths, class_names) -> ConfusionMatrix:
    """Accumulate counts[true][pred] over aligned prediction/truth labels."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise LengthMismatchError(f"{preds.size} predictions vs {truths.size} truths")
    n = len(class_names)
    if preds.size and (
        preds.min() < 0 or preds.max() >= n or truths.min() < 0 or truths.max() >= n
    ):
        raise LabelOutOfRangeError(f"labels must lie in [0, {n})")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts, tuple(class_names))


@dataclass
class IcbhiScores:
    sensitivity: float | None
    specificity: float | None
    score: float | None
    undefined: list[str] = field(default_factory=list)


@dataclass
class MacroScores:
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    per_class_precision: list[float]
    per_class_recall: list[float | None]
    undefined: list[str] = field(default_factory=list)


def _check_task(cm: ConfusionMatrix, task: Task) -> None:
    if cm.class_names != task.class_names:
        raise ValueError(
            f"confusion matrix classes {cm.class_names} do not match task "
            f"{task.value} ({task.class_names})"
        )


def icbhi_micro(cm: ConfusionMatrix, task: Task, strict: bool = False) -> IcbhiScores:
    """Pooled sensitivity over the non-normal classes, specificity of the
    normal class, and their mean. Zero denominators yield flagged None (or
    ZeroDenominatorError when strict)."""
    _check_task(cm, task)
    diag = np.diag(cm.counts)
    totals = cm.row_totals()
    abnormal = [c for c in range(cm.n_classes) if c != _NORMAL]
    n_abnormal = int(totals[abnormal].sum())
    n_normal = int(totals[_NORMAL])

    undefined = []
    if n_abnormal > 0:
        sensitivity = float(diag[abnormal].sum() / n_abnormal)
    elif strict:
        raise ZeroDenominatorError("no abnormal instances; sensitivity undefined")
    else:
        sensitivity, undefined = None, undefined + ["sensitivity"]
    if n_normal > 0:
        specificity = float(diag[_NORMAL] / n_normal)
    elif strict:
        raise ZeroDenominatorError("no normal instances; specificity undefined")
    else:
        specificity, undefined = None, undefined + ["specificity"]
    if sensitivity is None or specificity is None:
        score = None
        undefined = undefined + ["icbhi_score"]
    else:
        score = (sensitivity + specificity) / 2.0
    return IcbhiScores(sensitivity, specificity, score, undefined)


def macro(cm: ConfusionMatrix, strict: bool = False) -> MacroScores:
    """Unweighted per-class means. Accuracy is the mean of per-class recalls;
    classes never predicted contribute precision 0 (logged)."""
    diag = np.diag(cm.counts).astype(np.float64)
    row = cm.row_totals().astype(np.float64)
    col = cm.col_totals().astype(np.float64)

    undefined = []
    recalls: list[float | None] = []
    for c in range(cm.n_classes):
        if row[c] == 0:
            if strict:
                raise ZeroDenominatorError(
                    f"class {cm.class_names[c]!r} has no instances; recall undefined"
                )
            recalls.append(None)
        else:
            recalls.append(float(diag[c] / row[c]))

    precisions: list[float] = []
    for c in range(cm.n_classes):
        if col[c] == 0:
            log.warning("class %r never predicted; precision set to 0", cm.class_names[c])
            precisions.append(0.0)
        else:
            precisions.append(float(diag[c] / col[c]))

    if any(r is None for r in recalls):
        undefined += ["macro_accuracy", "macro_recall", "macro_f1"]
        accuracy = recall = f1 = None
    else:
        accuracy = recall = float(np.mean([r for r in recalls]))
        per_f1 = [
            0.0 if (p + r) == 0 else 2.0 * p * r / (p + r)
            for p, r in zip(precisions, recalls)
        ]
        f1 = float(np.mean(per_f1))
    precision = float(np.mean(precisions))
    return MacroScores(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        per_class_precision=precisions,
        per_class_recall=recalls,
        undefined=undefined,
    )


@dataclass
class MetricsReport:
    task: str
    sensitivity: float | None
    specificity: float | None
    icbhi_score: float | None
    macro_accuracy: float | None
    macro_precision: float | None
    macro_recall: float | None
    macro_f1: float | None
    per_class_precision: list[float]
    per_class_recall: list[float | None]
    undefined: list[str]

    def as_dict(self) -> dict:
        return {
            "task": self.task,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "icbhi_score": self.icbhi_score,
            "macro_accuracy": self.macro_accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "undefined": self.undefined,
        }


def report(cm: ConfusionMatrix, task: Task) -> MetricsReport:
    """Both criterion groups combined into one record."""
    mi = icbhi_micro(cm, task)
    ma = macro(cm)
    return MetricsReport(
        task=task.value,
        sensitivity=mi.sensitivity,
        specificity=mi.specificity,
        icbhi_score=mi.score,
        macro_accuracy=ma.accuracy,
        macro_precision=ma.precision,
        macro_recall=ma.recall,
        macro_f1=ma.f1,
        per_class_precision=ma.per_class_precision,
        per_class_recall=ma.per_class_recall,
        undefined=mi.undefined + ma.undefined,
    )


def collapse_anomaly(cm: ConfusionMatrix) -> ConfusionMatrix:
    """Fold a 4-way anomaly matrix (crackles, wheezes, both -> abnormal) into
    the 2-way one."""
    if cm.class_names != Task.ANOMALY4.class_names:
        raise ValueError("expected a 4-class anomaly confusion matrix")
    out = np.zeros((2, 2), dtype=np.int64)
    for t in range(4):
        for p in range(4):
            out[min(t, 1), min(p, 1)] += cm.counts[t, p]
    return ConfusionMatrix(out, Task.ANOMALY2.class_names)


# --- splitting ---------------------------------------------------------------


def split(
    items: list,
    ratio: float = 0.8,
    seed: int = 0,
    stratify: bool = True,
    labels: list[int] | None = None,
    n_classes: int | None = None,
    patient_key=None,
):
    """Deterministic, disjoint, exhaustive train/test partition.

    Stratified mode preserves per-class proportions within one item per class
    (per-class round-half-up of ratio * N_c); when n_classes is given, every
    class must be present. With patient_key, whole patients are assigned
    greedily to the training side until it holds ~ratio of the items
    (patient-disjoint; stratification then only approximate).
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    if len(items) < 2:
        raise EmptyClassError("need at least 2 items to split")
    rng = np.random.default_rng(seed)

    if patient_key is not None:
        groups: dict = {}
        for it in items:
            groups.setdefault(patient_key(it), []).append(it)
        keys = sorted(groups)
        rng.shuffle(keys)
        target = ratio * len(items)
        train, test = [], []
        taken = 0
        for k in keys:
            if taken < target:
                train.extend(groups[k])
                taken += len(groups[k])
            else:
                test.extend(groups[k])
        return train, test

    if labels is None:
        labels = [it.label for it in items]
    if len(labels) != len(items):
        raise LengthMismatchError("labels and items differ in length")

    if not stratify:
        order = rng.permutation(len(items))
        n_train = int(np.floor(ratio * len(items) + 0.5))
        return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]

    by_class: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(int(lab), []).append(i)
    if n_classes is not None:
        missing = sorted(set(range(n_classes)) - set(by_class))
        if missing:
            raise EmptyClassError(f"classes {missing} have no items")
    train, test = [], []
    for lab in sorted(by_class):
        idxs = np.array(by_class[lab])
        rng.shuffle(idxs)
        n_train = int(np.floor(ratio * len(idxs) + 0.5))
        train.extend(items[i] for i in idxs[:n_train])
        test.extend(items[i] for i in idxs[n_train:])
    return train, test
