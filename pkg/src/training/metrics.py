"""
Confusion matrices, accuracy/F1 metrics and subject-level voting
"""

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd


class VoteError(ValueError):
    """Exception raised when there is nothing to vote on"""
    pass


@dataclass
class Confusion:
    """Counts indexed by (true class, predicted class)"""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {self.matrix.shape}")
        if (self.matrix < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def empty(cls, classes: int) -> "Confusion":
        return cls(np.zeros((classes, classes), dtype=np.int64))

    @classmethod
    def from_predictions(cls, labels: Sequence[int], predictions: Sequence[int], classes: int) -> "Confusion":
        confusion = cls.empty(classes)
        confusion.add(labels, predictions)
        return confusion

    def add(self, labels: Sequence[int], predictions: Sequence[int]) -> None:
        np.add.at(self.matrix, (np.asarray(labels, dtype=int), np.asarray(predictions, dtype=int)), 1)

    @property
    def classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def support(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.matrix.sum())


@dataclass(frozen=True)
class Metrics:
    wa: float
    ua: float
    wf1: float
    mf1: float
    empty_classes: Tuple[int, ...] = ()

    def as_dict(self) -> Dict[str, float]:
        return {"WA": self.wa, "UA": self.ua, "WF1": self.wf1, "MF1": self.mf1}

    def __str__(self) -> str:
        flagged = f" (empty classes: {list(self.empty_classes)})" if self.empty_classes else ""
        return f"WA {self.wa:.4f} UA {self.ua:.4f} WF1 {self.wf1:.4f} MF1 {self.mf1:.4f}{flagged}"


def _safe_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    # 0/0 counts as 0
    return np.divide(numerator, denominator, out=np.zeros(len(numerator)), where=denominator > 0)


def metrics(cm: Confusion) -> Metrics:
    """
    Weighted/unweighted accuracy and weighted/macro F1

    Per-class accuracy is the recall of that class. Classes without samples
    score 0 and are listed in `empty_classes`.
    """
    counts = cm.matrix.astype(np.float64)
    support = counts.sum(axis=1)
    correct = np.diag(counts)
    predicted = counts.sum(axis=0)
    total = support.sum()

    accuracy = _safe_ratio(correct, support)
    precision = _safe_ratio(correct, predicted)
    f1 = _safe_ratio(2 * precision * accuracy, precision + accuracy)

    weights = support / total if total > 0 else np.zeros(cm.classes)
    return Metrics(
        wa=float((weights * accuracy).sum()),
        ua=float(accuracy.mean()),
        wf1=float((weights * f1).sum()),
        mf1=float(f1.mean()),
        empty_classes=tuple(int(c) for c in np.flatnonzero(support == 0)),
    )


def majority_vote(predictions: Sequence[int]) -> int:
    """Most frequent label; ties go to the lowest class index"""
    if len(predictions) == 0:
        raise VoteError("cannot vote on an empty list of predictions")
    return int(np.argmax(np.bincount(np.asarray(predictions, dtype=int))))


def vote_by_subject(frame: pd.DataFrame, subject: str = "subject", prediction: str = "prediction") -> pd.DataFrame:
    """One majority-vote label per subject"""
    missing = {subject, prediction} - set(frame.columns)
    if missing:
        raise VoteError(f"predictions table lacks columns {sorted(missing)}")
    grouped = frame.groupby(subject, sort=True)[prediction]
    return pd.DataFrame(
        {
            subject: list(grouped.groups.keys()),
            "label": [majority_vote(values.tolist()) for _, values in grouped],
            "utterances": grouped.size().tolist(),
        }
    )
