"""Task specifications, targets and the mini-batch Adam training loop.

Both the per-encoder multi-task networks and the stacked ensemble train
through :func:`fit`: the joint loss is the weighted sum of per-task losses
(cross-entropy on softmax heads, MSE on sigmoid heads), early stopping
watches the summed validation loss and the best parameters are restored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tc
from .errors import ConfigurationError, DataError, NumericError
from .tensor import LossKind, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskSpec:
    """A named prediction task: ``classification`` over ``classes`` or ``regression`` in [0, 1]."""

    name: str
    kind: str
    classes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ConfigurationError(f"task {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "classification" and len(self.classes) < 2:
            raise ConfigurationError(f"task {self.name!r}: classification needs >= 2 classes")
        if self.kind == "regression" and self.classes:
            raise ConfigurationError(f"task {self.name!r}: regression takes no classes")

    @classmethod
    def classification(cls, name: str, classes: Sequence[str]) -> "TaskSpec":
        return cls(name, "classification", tuple(classes))

    @classmethod
    def regression(cls, name: str) -> "TaskSpec":
        return cls(name, "regression")

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"

    @property
    def out_width(self) -> int:
        return len(self.classes) if self.is_classification else 1

    @property
    def head_activation(self) -> str:
        return "softmax" if self.is_classification else "sigmoid"

    @property
    def loss_kind(self) -> LossKind:
        return LossKind.CATEGORICAL_CROSS_ENTROPY if self.is_classification else LossKind.MEAN_SQUARED_ERROR

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(d["name"], d["kind"], tuple(d.get("classes", ())))


def task_targets(instances, tasks: Sequence[TaskSpec]) -> dict[str, np.ndarray]:
    """One-hot class matrices / score columns for every task.

    Every instance must be labelled for every task.
    """
    out = {}
    for task in tasks:
        if task.is_classification:
            index = {c: k for k, c in enumerate(task.classes)}
            y = np.zeros((len(instances), len(task.classes)))
            for i, inst in enumerate(instances):
                if inst.label not in index:
                    raise DataError(f"instance {inst.id}: label {inst.label!r} not in task {task.name!r}")
                y[i, index[inst.label]] = 1.0
        else:
            try:
                y = np.array([[inst.scores[task.name]] for inst in instances], dtype=np.float64)
            except KeyError as exc:
                raise DataError(f"an instance lacks a target for task {task.name!r}") from exc
            y = y.reshape(len(instances), 1)
        out[task.name] = y
    return out


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    patience: int = 5
    task_weights: dict[str, float] | None = None
    seed: int = 0
    lr: float = 0.001

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.task_weights and any(w <= 0 for w in self.task_weights.values()):
            raise ConfigurationError("task weights must be positive")

    def weight(self, task: str) -> float:
        return (self.task_weights or {}).get(task, 1.0)


@dataclass
class EpochRecord:
    epoch: int
    train: dict[str, float]
    val: dict[str, float]

    @property
    def train_total(self) -> float:
        return sum(self.train.values())

    @property
    def val_total(self) -> float:
        return sum(self.val.values())


@dataclass
class History:
    tasks: list[str]
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.epochs)

    def to_tsv(self) -> str:
        cols = ["epoch"] + [f"train.{t}" for t in self.tasks] + ["train.total"]
        cols += [f"val.{t}" for t in self.tasks] + ["val.total"]
        lines = ["\t".join(cols)]
        for rec in self.epochs:
            vals = [str(rec.epoch)] + [repr(rec.train[t]) for t in self.tasks] + [repr(rec.train_total)]
            vals += [repr(rec.val.get(t, float("nan"))) for t in self.tasks] + [repr(rec.val_total)]
            lines.append("\t".join(vals))
        return "\n".join(lines) + "\n"


def select(X, idx):
    """Row subset of an input collection (array, list, or tuple of those)."""
    if isinstance(X, tuple):
        return tuple(select(x, idx) for x in X)
    if isinstance(X, np.ndarray):
        return X[idx]
    return [X[i] for i in idx]


def n_rows(X) -> int:
    if isinstance(X, tuple):
        return n_rows(X[0])
    return len(X)


def joint_loss(outputs: dict[str, Tensor], targets: dict[str, np.ndarray], tasks, config: TrainConfig | None, idx=None):
    """Per-task loss tensors and their weighted sum."""
    per_task = {}
    total = None
    for task in tasks:
        y = targets[task.name] if idx is None else targets[task.name][idx]
        lt = tc.loss(outputs[task.name], y, task.loss_kind)
        per_task[task.name] = lt
        term = lt * (config.weight(task.name) if config else 1.0)
        total = term if total is None else total + term
    return per_task, total


def evaluate_loss(model, X, targets, batch_size: int = 256) -> dict[str, float]:
    n = n_rows(X)
    sums = {t.name: 0.0 for t in model.tasks}
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        outputs = model.forward(model.prepare(select(X, idx)), training=False)
        per_task, _ = joint_loss(outputs, targets, model.tasks, None, idx)
        for name, lt in per_task.items():
            sums[name] += lt.item() * len(idx)
    return {k: v / n for k, v in sums.items()}


def fit(model, X, targets, config: TrainConfig, X_val=None, val_targets=None, extra_params=None) -> History:
    """Mini-batch Adam on the weighted joint loss with early stopping.

    ``model`` provides ``tasks``, ``prepare(batch)``, ``forward(x, training, rng)``
    and ``named_parameters()``.  Without validation data, early stopping
    watches the training loss.
    """
    n = n_rows(X)
    if n == 0:
        raise DataError("empty training set")
    params = model.named_parameters()
    optim = tc.Adam(params, lr=config.lr)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    history = History([t.name for t in model.tasks])
    best = float("inf")
    best_state = {k: p.data.copy() for k, p in params.items()}
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        sums = {t.name: 0.0 for t in model.tasks}
        for b, start in enumerate(range(0, n, config.batch_size), 1):
            idx = order[start:start + config.batch_size]
            optim.zero_grad()
            outputs = model.forward(model.prepare(select(X, idx)), training=True, rng=rng)
            per_task, total = joint_loss(outputs, targets, model.tasks, config, idx)
            if not np.isfinite(total.data).all():
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}: {total.item()!r}")
            total.backward()
            optim.step()
            for name, lt in per_task.items():
                sums[name] += lt.item() * len(idx)
        train_loss = {k: v / n for k, v in sums.items()}
        if X_val is not None and n_rows(X_val) > 0:
            val_loss = evaluate_loss(model, X_val, val_targets)
        else:
            val_loss = dict(train_loss)
        record = EpochRecord(epoch, train_loss, val_loss)
        history.epochs.append(record)
        log.info("epoch %d train %.5f val %.5f", epoch, record.train_total, record.val_total)
        if record.val_total < best:
            best = record.val_total
            history.best_epoch = epoch
            best_state = {k: p.data.copy() for k, p in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    for k, p in params.items():
        p.data[...] = best_state[k]
    return history


@dataclass
class TaskPrediction:
    """Head output for one task: class distribution plus argmax, or a scalar in [0, 1]."""

    task: TaskSpec
    values: np.ndarray

    @property
    def labels(self) -> list[str]:
        if not self.task.is_classification:
            raise ValueError(f"task {self.task.name!r} is a regression task")
        return [self.task.classes[k] for k in self.values.argmax(axis=1)]

    @property
    def scores(self) -> np.ndarray:
        if self.task.is_classification:
            raise ValueError(f"task {self.task.name!r} is a classification task")
        return self.values[:, 0]


def predict_outputs(model, X, batch_size: int = 256) -> dict[str, TaskPrediction]:
    n = n_rows(X)
    chunks: dict[str, list[np.ndarray]] = {t.name: [] for t in model.tasks}
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        outputs = model.forward(model.prepare(select(X, idx)), training=False)
        for name, out in outputs.items():
            chunks[name].append(out.data)
    result = {}
    for task in model.tasks:
        parts = chunks[task.name]
        values = np.concatenate(parts) if parts else np.zeros((0, task.out_width))
        result[task.name] = TaskPrediction(task, values)
    return result
