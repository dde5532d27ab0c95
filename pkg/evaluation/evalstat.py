"""
Targets, folds and AUC statistics.

AUC uses the Mann-Whitney formulation (ties count 1/2). Confidence intervals
come from a percentile bootstrap over pooled (label, score) pairs, and method
comparisons from a paired permutation test that swaps the two methods' scores
lesion by lesion.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata
from sklearn.model_selection import StratifiedGroupKFold, StratifiedKFold

from trajcore.errors import EvaluationError
from trajcore.types import ResponseCategory

logger = logging.getLogger(__name__)


class Task(Enum):
    CR_VS_NONCR = "cr"
    RESP_VS_NONRESP = "resp"


_POSITIVE = {
    Task.CR_VS_NONCR: {ResponseCategory.CR},
    Task.RESP_VS_NONRESP: {ResponseCategory.CR, ResponseCategory.PR},
}


def make_targets(categories: Sequence[Optional[ResponseCategory]], task) -> np.ndarray:
    """
    Binary labels from t6 categories.

    CR_VS_NONCR: CR -> 1. RESP_VS_NONRESP: CR or PR -> 1.
    """
    task = Task(task)
    missing = [i for i, c in enumerate(categories) if c is None]
    if missing:
        raise EvaluationError("t6 category missing", f"rows {missing[:10]}")
    positive = _POSITIVE[task]
    return np.array([1 if c in positive else 0 for c in categories], dtype=int)


def prevalence(labels: Sequence[int]) -> Dict[str, float]:
    labels = np.asarray(labels)
    n = len(labels)
    pos = float(labels.sum()) / n if n else 0.0
    return {"n": n, "positive": pos, "negative": 1.0 - pos if n else 0.0}


def _check_binary(labels: np.ndarray, scores: np.ndarray):
    if labels.shape != scores.shape:
        raise EvaluationError("labels and scores differ in length",
                              f"{labels.shape} != {scores.shape}")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise EvaluationError("AUC is undefined with a single class", f"n={len(labels)}")


def auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Probability that a random positive outscores a random negative (ties 1/2)."""
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(scores, dtype=float)
    _check_binary(labels, scores)
    return _auc_unchecked(labels, scores)


def _auc_unchecked(labels: np.ndarray, scores: np.ndarray) -> float:
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def bootstrap_ci(labels: Sequence[int], scores: Sequence[float], n_boot: int = 1000,
                 seed: int = 0, level: float = 0.95) -> Tuple[float, float]:
    """
    Percentile bootstrap interval of the AUC.

    Single-class resamples are redrawn, so exactly n_boot AUCs enter the
    quantiles (linear interpolation).
    """
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(scores, dtype=float)
    _check_binary(labels, scores)
    rng = np.random.default_rng(seed)
    n = len(labels)
    values = np.empty(n_boot)
    redrawn = 0
    for i in range(n_boot):
        while True:
            idx = rng.integers(0, n, n)
            n_pos = labels[idx].sum()
            if 0 < n_pos < n:
                break
            redrawn += 1
        values[i] = _auc_unchecked(labels[idx], scores[idx])
    if redrawn:
        logger.debug("bootstrap redrew %d single-class resamples", redrawn)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [tail, 1.0 - tail])
    return float(lo), float(hi)


def permutation_test(labels: Sequence[int], scores_a: Sequence[float], scores_b: Sequence[float],
                     n_perm: int = 1000, seed: int = 0) -> float:
    """
    Paired permutation p-value for |AUC_a - AUC_b|.

    Each permutation swaps a/b scores per lesion with probability 1/2;
    p = (1 + #{stat >= observed}) / (n_perm + 1).
    """
    labels = np.asarray(labels, dtype=int)
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    _check_binary(labels, a)
    if a.shape != b.shape:
        raise EvaluationError("score vectors are not aligned", f"{a.shape} != {b.shape}")

    observed = abs(_auc_unchecked(labels, a) - _auc_unchecked(labels, b))
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(n_perm):
        swap = rng.random(len(labels)) < 0.5
        pa = np.where(swap, b, a)
        pb = np.where(swap, a, b)
        stat = abs(_auc_unchecked(labels, pa) - _auc_unchecked(labels, pb))
        if stat >= observed:
            exceed += 1
    return (1.0 + exceed) / (n_perm + 1.0)


@dataclass
class FoldPlan:
    """Fold index per lesion; lesions of one patient share a fold when grouped."""
    n_folds: int
    assignments: Dict[str, int]
    seed: int
    grouped: bool = True

    def splits(self, keys: Sequence[str]) -> List[Tuple[np.ndarray, np.ndarray]]:
        folds = np.array([self.assignments[k] for k in keys])
        return [(np.flatnonzero(folds != f), np.flatnonzero(folds == f))
                for f in range(self.n_folds)]

    def to_dict(self) -> Dict[str, Any]:
        return {"n_folds": self.n_folds, "seed": self.seed, "grouped": self.grouped,
                "assignments": dict(sorted(self.assignments.items()))}


def make_fold_plan(keys: Sequence[str], labels: Sequence[int], groups: Sequence[str],
                   n_folds: int = 5, seed: int = 0, grouped: bool = True) -> FoldPlan:
    """
    Stratified (and by default patient-grouped) k-fold assignment.

    Args:
        keys: Lesion keys, one per row
        labels: Binary labels used for stratification
        groups: Patient id per row
        n_folds: Number of folds
        seed: Shuffling seed
        grouped: False gives a plain lesion-level stratified split
    """
    labels = np.asarray(labels, dtype=int)
    if len(set(keys)) != len(keys):
        raise EvaluationError("lesion keys must be unique")
    if grouped and len(set(groups)) < n_folds:
        raise EvaluationError(f"need at least {n_folds} patients for grouped folds",
                              f"patients={len(set(groups))}")
    if np.bincount(labels, minlength=2).min() < n_folds and not grouped:
        raise EvaluationError(f"each class needs at least {n_folds} lesions")

    if grouped:
        splitter = StratifiedGroupKFold(n_splits=n_folds, shuffle=True, random_state=seed)
        splits = splitter.split(np.zeros(len(labels)), labels, groups)
    else:
        splitter = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
        splits = splitter.split(np.zeros(len(labels)), labels)

    assignments: Dict[str, int] = {}
    for fold, (_, test) in enumerate(splits):
        for i in test:
            assignments[keys[i]] = fold
    return FoldPlan(n_folds, assignments, seed, grouped)


@dataclass
class EvalOutcome:
    """Pooled out-of-fold scores of one method at one horizon."""
    task: Task
    method: str
    horizon: int
    keys: List[str]
    labels: np.ndarray
    scores: np.ndarray
    auc: float
    ci95: Tuple[float, float]
    # wall-clock data; kept out of deterministic outputs
    runtime: Dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_scores: bool = False) -> Dict[str, Any]:
        data = {
            "task": self.task.value,
            "method": self.method,
            "horizon": self.horizon,
            "auc": self.auc,
            "ci95": list(self.ci95),
            "n": len(self.keys),
            "prevalence": prevalence(self.labels)["positive"],
        }
        if include_scores:
            data["keys"] = list(self.keys)
            data["labels"] = [int(v) for v in self.labels]
            data["scores"] = [float(v) for v in self.scores]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalOutcome":
        """Inverse of to_dict(include_scores=True)."""
        try:
            return cls(
                task=Task(data["task"]),
                method=str(data["method"]),
                horizon=int(data["horizon"]),
                keys=list(data["keys"]),
                labels=np.asarray(data["labels"], dtype=int),
                scores=np.asarray(data["scores"], dtype=float),
                auc=float(data["auc"]),
                ci95=(float(data["ci95"][0]), float(data["ci95"][1])),
            )
        except (KeyError, ValueError, TypeError, IndexError) as e:
            raise EvaluationError("malformed evaluation outcome", repr(e))
