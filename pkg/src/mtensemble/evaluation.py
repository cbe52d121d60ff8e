"""Accuracy, Pearson correlation, dependent evaluation and significance testing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .errors import DataError, UndefinedMetricError


def accuracy(gold: Sequence, pred: Sequence) -> float:
    if len(gold) != len(pred):
        raise DataError(f"accuracy: {len(gold)} gold vs {len(pred)} predicted labels")
    if len(gold) == 0:
        raise UndefinedMetricError("accuracy of an empty sample is undefined")
    return sum(g == p for g, p in zip(gold, pred)) / len(gold)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation; raises when either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"pearson: shapes {x.shape} and {y.shape} do not match")
    if len(x) < 2:
        raise UndefinedMetricError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    syy = dy @ dy
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("pearson is undefined for a constant input")
    r = (dx @ dy) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def dependent_pearson(gold_classes, pred_classes, gold_scores, pred_scores) -> tuple[float, int]:
    """Pearson over the instances whose class was predicted correctly.

    Returns ``(r, n_used)``.
    """
    n = len(gold_classes)
    if not (len(pred_classes) == len(gold_scores) == len(pred_scores) == n):
        raise DataError("dependent_pearson: input sequences are not aligned")
    keep = [i for i in range(n) if gold_classes[i] == pred_classes[i]]
    if len(keep) < 2:
        raise UndefinedMetricError(f"dependent evaluation kept {len(keep)} instance(s); need >= 2")
    gs = np.asarray(gold_scores, dtype=np.float64)
    ps = np.asarray(pred_scores, dtype=np.float64)
    if len(keep) == n:
        return pearson(gs, ps), n
    return pearson(gs[keep], ps[keep]), len(keep)


@dataclass
class ConfusionMatrix:
    """Counts with rows = gold class and columns = predicted class."""

    classes: list[str]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def accuracy(self) -> float:
        if self.total == 0:
            raise UndefinedMetricError("accuracy of an empty confusion matrix is undefined")
        return float(np.trace(self.counts) / self.total)

    def to_tsv(self) -> str:
        lines = ["gold\\pred\t" + "\t".join(self.classes)]
        for c, row in zip(self.classes, self.counts):
            lines.append(c + "\t" + "\t".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def confusion(gold: Sequence[str], pred: Sequence[str], classes: Sequence[str]) -> ConfusionMatrix:
    index = {c: k for k, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for g, p in zip(gold, pred, strict=True):
        if g not in index or p not in index:
            raise DataError(f"label {g if g not in index else p!r} not in class list {list(classes)}")
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(list(classes), counts)


# ---------------------------------------------------------------------------
# significance
# ---------------------------------------------------------------------------

def student_t_sf2(t: float, df: int) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)`` for Student's t."""
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Paired t statistic and two-sided p-value.

    With zero-variance differences the statistic is degenerate: a zero mean
    gives ``(0.0, 1.0)``, a non-zero mean gives ``(+-inf, 0.0)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("paired_t_test: samples must be equal-length vectors")
    n = len(a)
    if n < 2:
        raise UndefinedMetricError("paired_t_test needs n >= 2")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0 or sd < 1e-15 * max(1.0, abs(mean)):
        if mean == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    return float(t), student_t_sf2(t, n - 1)


def normal_samples(center: float, n: int = 20, sigma: float = 0.05, seed: int = 0) -> np.ndarray:
    """``n`` draws from N(center, sigma^2), used to turn a single reported score into a sample."""
    return np.random.default_rng(seed).normal(center, sigma, size=n)


def score_significance(score_a: float, score_b: float, n: int = 20, sigma: float = 0.05,
                       seed: int = 0) -> tuple[float, float]:
    """Sample both scores around their reported values and run a paired t-test."""
    rng = np.random.SeedSequence(seed).spawn(2)
    a = np.random.default_rng(rng[0]).normal(score_a, sigma, size=n)
    b = np.random.default_rng(rng[1]).normal(score_b, sigma, size=n)
    return paired_t_test(a, b)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class MetricRow:
    system: str
    task: str
    metric: str
    value: float | None
    n: int
    note: str = ""

    def formatted(self) -> str:
        return "undefined" if self.value is None else f"{self.value:.6f}"


@dataclass
class EvalReport:
    dependent: bool = False
    rows: list[MetricRow] = field(default_factory=list)
    confusions: dict[str, ConfusionMatrix] = field(default_factory=dict)

    def add(self, system: str, task: str, metric: str, fn, n: int) -> None:
        try:
            value = fn()
            note = ""
        except UndefinedMetricError as exc:
            value, note = None, str(exc)
        if isinstance(value, tuple):
            value, n = value
        self.rows.append(MetricRow(system, task, metric, value, n, note))

    def get(self, task: str, metric: str, system: str = "multitask") -> float | None:
        for row in self.rows:
            if (row.system, row.task, row.metric) == (system, task, metric):
                return row.value
        raise KeyError((system, task, metric))

    def to_text(self) -> str:
        lines = [f"dependent_evaluation={'true' if self.dependent else 'false'}"]
        for r in self.rows:
            key = f"{r.system}.{r.task}.{r.metric}"
            lines.append(f"{key}={r.formatted()}")
            lines.append(f"{key}.n={r.n}")
            if r.note:
                lines.append(f"{key}.note={r.note}")
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> str:
        lines = ["system\ttask\tmetric\tvalue\tn\tnote"]
        for r in self.rows:
            lines.append(f"{r.system}\t{r.task}\t{r.metric}\t{r.formatted()}\t{r.n}\t{r.note}")
        return "\n".join(lines) + "\n"


def evaluate(tasks, gold: dict[str, Sequence], pred: dict[str, Sequence], dependent: bool = False,
             system: str = "multitask", report: EvalReport | None = None) -> EvalReport:
    """Score every task.

    ``gold`` and ``pred`` map task names to class labels (classification) or
    scores (regression).  With ``dependent=True`` each regression task is
    additionally scored only on instances whose label for the first
    classification task was predicted correctly.
    """
    report = report or EvalReport(dependent=dependent)
    report.dependent = dependent
    cls_task = next((t for t in tasks if t.is_classification), None)
    for task in tasks:
        g, p = gold[task.name], pred[task.name]
        if task.is_classification:
            report.add(system, task.name, "accuracy", lambda: accuracy(g, p), len(g))
            report.confusions[f"{system}.{task.name}"] = confusion(g, p, task.classes)
        else:
            report.add(system, task.name, "pearson", lambda: pearson(g, p), len(g))
            if dependent and cls_task is not None:
                gc, pc = gold[cls_task.name], pred[cls_task.name]
                report.add(system, task.name, "pearson_dependent",
                           lambda: dependent_pearson(gc, pc, g, p), 0)
    return report
