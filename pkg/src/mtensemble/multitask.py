"""Per-encoder multi-task networks.

Architecture for every encoder kind::

    tokens -> frozen embeddings -> encoder (CNN | 2xLSTM | 2xGRU)
           -> shared dense(128, relu)          <- task-aware representation
           -> dropout 0.25
           -> per task: dense(100, relu) -> dropout 0.25 -> softmax(k) | sigmoid(1)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tc
from .errors import ConfigurationError
from .features import tokenize
from .layers import ENCODERS, MAX_LEN, REPR_WIDTH, Dense, EmbeddingTable, Layer, embed_batch
from .tensor import Tensor
from .training import History, TaskPrediction, TaskSpec, TrainConfig, fit, predict_outputs, task_targets

DROPOUT = 0.25
HEAD_HIDDEN = 100


def stream(seed: int, key: int) -> np.random.Generator:
    """Independent generator for component ``key`` of a seeded build."""
    return np.random.default_rng(np.random.SeedSequence([seed, key]))


class TaskHead(Layer):
    """dense(hidden, relu) -> dropout -> output layer with the task's activation."""

    def __init__(self, n_in: int, hidden: int, task: TaskSpec, rng: np.random.Generator):
        self.task = task
        self.hidden = Dense(n_in, hidden, "relu", rng)
        self.out = Dense(hidden, task.out_width, task.head_activation, rng)

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        return self.out(tc.dropout(self.hidden(x), DROPOUT, training, rng))

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{n}.{k}": p for n, layer in (("hidden", self.hidden), ("out", self.out))
                for k, p in layer.named_parameters().items()}


@dataclass
class RepresentationRecord:
    instance_id: str
    vector: np.ndarray


class MultiTaskModel(Layer):
    def __init__(self, encoder: str, tasks: Sequence[TaskSpec], table: EmbeddingTable,
                 seed: int = 0, max_len: int = MAX_LEN):
        if encoder not in ENCODERS:
            raise ConfigurationError(f"unknown encoder {encoder!r}; expected one of {sorted(ENCODERS)}")
        tasks = list(tasks)
        if not tasks:
            raise ConfigurationError("a multi-task model needs at least one task")
        names = [t.name for t in tasks]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate task names in {names}")
        self.encoder_kind = encoder
        self.tasks = tasks
        self.table = table
        self.seed = seed
        self.max_len = max_len
        self.encoder = ENCODERS[encoder](table.dim, stream(seed, 0))
        self.shared = Dense(self.encoder.out_dim, REPR_WIDTH, "relu", stream(seed, 1))
        self.heads = {t.name: TaskHead(REPR_WIDTH, HEAD_HIDDEN, t, stream(seed, 100 + k))
                      for k, t in enumerate(tasks)}

    def descriptor(self) -> dict:
        return {
            "model": "multitask",
            "encoder": self.encoder_kind,
            "tasks": [t.to_dict() for t in self.tasks],
            "embedding_dim": self.table.dim,
            "max_len": self.max_len,
            "representation_width": REPR_WIDTH,
            "head_hidden": HEAD_HIDDEN,
            "dropout": DROPOUT,
        }

    def named_parameters(self) -> dict[str, Tensor]:
        params = {f"encoder.{k}": p for k, p in self.encoder.named_parameters().items()}
        params.update({f"shared.{k}": p for k, p in self.shared.named_parameters().items()})
        for name, head in self.heads.items():
            params.update({f"heads.{name}.{k}": p for k, p in head.named_parameters().items()})
        return params

    def head_parameters(self, task: str) -> dict[str, Tensor]:
        return {k: p for k, p in self.named_parameters().items() if k.startswith(f"heads.{task}.")}

    # -- forward -------------------------------------------------------------
    def prepare(self, token_lists) -> np.ndarray:
        return embed_batch(token_lists, self.table, self.max_len)

    def represent(self, x: np.ndarray) -> Tensor:
        """The 128-d task-aware representation (post-relu, before dropout)."""
        return self.shared(self.encoder(Tensor(x)))

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> dict[str, Tensor]:
        rep = tc.dropout(self.represent(x), DROPOUT, training, rng)
        return {name: head(rep, training, rng) for name, head in self.heads.items()}


def build_model(encoder: str, tasks: Sequence[TaskSpec], table: EmbeddingTable,
                seed: int = 0, max_len: int = MAX_LEN) -> MultiTaskModel:
    return MultiTaskModel(encoder, tasks, table, seed=seed, max_len=max_len)


def _tokens(instances) -> list[list[str]]:
    return [tokenize(inst.text) for inst in instances]


def train(model: MultiTaskModel, train_set, val_set, config: TrainConfig) -> History:
    """Jointly train all heads on ``train_set``; early stopping on ``val_set``."""
    X = _tokens(train_set)
    Y = task_targets(train_set, model.tasks)
    if val_set:
        return fit(model, X, Y, config, _tokens(val_set), task_targets(val_set, model.tasks))
    return fit(model, X, Y, config)


def predict(model: MultiTaskModel, instances) -> dict[str, TaskPrediction]:
    return predict_outputs(model, _tokens(instances))


def representation_matrix(model: MultiTaskModel, instances, batch_size: int = 256) -> np.ndarray:
    tokens = _tokens(instances)
    chunks = [model.represent(model.prepare(tokens[s:s + batch_size])).data
              for s in range(0, len(tokens), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, REPR_WIDTH))


def extract_representation(model: MultiTaskModel, instances) -> list[RepresentationRecord]:
    matrix = representation_matrix(model, instances)
    return [RepresentationRecord(inst.id, row) for inst, row in zip(instances, matrix)]


def train_single_task_models(encoder: str, tasks: Sequence[TaskSpec], table: EmbeddingTable,
                             train_set, val_set, config: TrainConfig, seed: int = 0,
                             max_len: int = MAX_LEN) -> dict[str, tuple[MultiTaskModel, History]]:
    """One independent model per task, each with the full training budget."""
    out = {}
    for task in tasks:
        model = build_model(encoder, [task], table, seed=seed, max_len=max_len)
        out[task.name] = (model, train(model, train_set, val_set, config))
    return out
