"""Accuracy and support-weighted P/R/F1, plus pairwise model significance
tests (McNemar for binary predictions, Bowker for multiclass) and the
significance-matrix report.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sp_stats

from .schemas import TaskSchema

SIGNIFICANCE_LEVEL = 0.05


class EvaluationError(ValueError):
    pass


@dataclass
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    # set when precision/recall were undefined (no predicted/gold instances)
    undefined: tuple[str, ...] = ()


@dataclass
class EvalReport:
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class: list[ClassMetrics]
    num_samples: int

    def to_json_obj(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "num_samples": self.num_samples,
            "per_class": [
                {
                    "label": c.label,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                    "undefined": list(c.undefined),
                }
                for c in self.per_class
            ],
        }


def _as_index_array(values, name: str, num_classes: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64)
    if arr.ndim != 1:
        raise EvaluationError(f"{name} must be one-dimensional")
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        raise EvaluationError(f"{name} contains indices outside [0, {num_classes})")
    return arr


def confusion_matrix(gold: np.ndarray, pred: np.ndarray, k: int) -> np.ndarray:
    return np.bincount(gold * k + pred, minlength=k * k).reshape(k, k)


def evaluate(predictions, gold, schema: TaskSchema) -> EvalReport:
    """Accuracy plus per-class and support-weighted precision/recall/F1.

    Classes with no predicted (precision) or no gold (recall) instances get 0
    for the undefined metric, flagged in the per-class row; weights are gold
    supports, so weighted recall always equals accuracy.
    """
    k = schema.num_classes
    pred = _as_index_array(predictions, "predictions", k)
    g = _as_index_array(gold, "gold", k)
    if pred.shape != g.shape:
        raise EvaluationError("predictions and gold must have equal length")
    if pred.size == 0:
        raise EvaluationError("cannot evaluate empty input")

    cm = confusion_matrix(g, pred, k)
    n = int(cm.sum())
    accuracy = float(np.trace(cm)) / n

    per_class = []
    weighted = np.zeros(3)
    for c in range(k):
        tp = cm[c, c]
        pred_c = cm[:, c].sum()
        gold_c = cm[c, :].sum()
        undefined = []
        if pred_c:
            precision = tp / pred_c
        else:
            precision = 0.0
            undefined.append("precision")
        if gold_c:
            recall = tp / gold_c
        else:
            recall = 0.0
            undefined.append("recall")
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(
            ClassMetrics(
                label=schema.label_name(c),
                precision=float(precision),
                recall=float(recall),
                f1=float(f1),
                support=int(gold_c),
                undefined=tuple(undefined),
            )
        )
        weighted += (gold_c / n) * np.array([precision, recall, f1])

    return EvalReport(
        accuracy=accuracy,
        weighted_precision=float(weighted[0]),
        weighted_recall=float(weighted[1]),
        weighted_f1=float(weighted[2]),
        per_class=per_class,
        num_samples=n,
    )


@dataclass
class SignificanceResult:
    test: str  # "mcnemar" | "bowker"
    statistic: float
    degrees_of_freedom: int
    p_value: float
    detail: dict = field(default_factory=dict)

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL


def mcnemar(preds_a, preds_b, gold, method: str = "chi2") -> SignificanceResult:
    """McNemar's test on paired binary predictions.

    Continuity-corrected chi-square statistic (|b-c|-1)^2/(b+c) with one
    degree of freedom; ``method="exact"`` uses the two-sided binomial instead
    (useful when b+c is small). No disagreements means statistic 0, p 1.
    """
    a = np.asarray(preds_a)
    b_arr = np.asarray(preds_b)
    g = np.asarray(gold)
    if not (a.shape == b_arr.shape == g.shape):
        raise EvaluationError("prediction and gold arrays must have equal length")
    values = set(np.unique(np.concatenate([a, b_arr, g])).tolist())
    if not values <= {0, 1}:
        raise EvaluationError("mcnemar requires a binary task; use bowker for multiclass")

    correct_a = a == g
    correct_b = b_arr == g
    b = int(np.sum(correct_a & ~correct_b))
    c = int(np.sum(~correct_a & correct_b))
    if b + c == 0:
        return SignificanceResult("mcnemar", 0.0, 1, 1.0, {"b": b, "c": c, "method": method})
    statistic = (abs(b - c) - 1) ** 2 / (b + c)
    if method == "exact":
        p = min(1.0, 2.0 * float(sp_stats.binom.cdf(min(b, c), b + c, 0.5)))
    elif method == "chi2":
        p = float(sp_stats.chi2.sf(statistic, df=1))
    else:
        raise EvaluationError(f"unknown mcnemar method {method!r}")
    return SignificanceResult("mcnemar", float(statistic), 1, p, {"b": b, "c": c, "method": method})


def bowker(preds_a, preds_b, num_classes: Optional[int] = None) -> SignificanceResult:
    """Bowker's symmetry test on the k x k prediction contingency table.

    Off-diagonal pairs with n_ij + n_ji = 0 are excluded from the statistic
    and the degrees of freedom. A table with no usable pair gives statistic 0
    and p 1.
    """
    a = np.asarray(preds_a, dtype=np.int64)
    b = np.asarray(preds_b, dtype=np.int64)
    if a.shape != b.shape:
        raise EvaluationError("prediction arrays must have equal length")
    k = num_classes if num_classes is not None else int(max(a.max(initial=0), b.max(initial=0))) + 1
    if k < 2:
        raise EvaluationError("bowker requires at least 2 classes")
    if a.size and (a.min() < 0 or a.max() >= k or b.min() < 0 or b.max() >= k):
        raise EvaluationError(f"predictions outside [0, {k})")

    table = np.bincount(a * k + b, minlength=k * k).reshape(k, k)
    statistic = 0.0
    df = 0
    for i in range(k):
        for j in range(i + 1, k):
            denom = table[i, j] + table[j, i]
            if denom == 0:
                continue
            statistic += (table[i, j] - table[j, i]) ** 2 / denom
            df += 1
    p = float(sp_stats.chi2.sf(statistic, df=df)) if df > 0 else 1.0
    return SignificanceResult("bowker", float(statistic), df, p, {"k": k})


@dataclass
class SignificanceMatrix:
    names: list[str]
    cells: list[list[Optional[SignificanceResult]]]

    def to_json_obj(self) -> dict:
        return {
            "models": self.names,
            "cells": [
                [
                    None
                    if cell is None
                    else {
                        "test": cell.test,
                        "statistic": cell.statistic,
                        "df": cell.degrees_of_freedom,
                        "p_value": cell.p_value,
                        "significant": cell.significant,
                    }
                    for cell in row
                ]
                for row in self.cells
            ],
        }

    def render(self) -> str:
        w = max(8, max(len(n) for n in self.names) + 1)
        lines = ["".ljust(w) + "".join(n.rjust(w) for n in self.names)]
        for i, name in enumerate(self.names):
            cells = []
            for j in range(len(self.names)):
                cell = self.cells[i][j]
                if cell is None:
                    cells.append("-".rjust(w))
                else:
                    mark = "*" if cell.significant else " "
                    cells.append(f"{cell.p_value:.4f}{mark}".rjust(w))
            lines.append(name.ljust(w) + "".join(cells))
        lines.append(f"* p < {SIGNIFICANCE_LEVEL}")
        return "\n".join(lines)


def significance_matrix(
    model_predictions: Sequence,
    gold,
    schema: TaskSchema,
    names: Optional[Sequence[str]] = None,
) -> SignificanceMatrix:
    """All-pairs significance tests: McNemar when the task is binary,
    Bowker otherwise. The matrix is symmetric with empty diagonal."""
    m = len(model_predictions)
    if m < 2:
        raise EvaluationError("need at least 2 models to compare")
    names = list(names) if names is not None else [f"model{i}" for i in range(m)]
    if len(names) != m:
        raise EvaluationError("one name per model required")
    cells: list[list[Optional[SignificanceResult]]] = [[None] * m for _ in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            if schema.num_classes == 2:
                res = mcnemar(model_predictions[i], model_predictions[j], gold)
            else:
                res = bowker(model_predictions[i], model_predictions[j], schema.num_classes)
            cells[i][j] = res
            cells[j][i] = res
    return SignificanceMatrix(names=names, cells=cells)
