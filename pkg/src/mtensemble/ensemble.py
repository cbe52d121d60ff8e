"""Stacked multi-task MLP over the three encoder representations and the feature block.

Input rows are laid out ``[LSTM | CNN | GRU | Feat]`` (4 x 128).  The
network has two shared hidden layers (256, 128; relu, dropout 0.25) and two
hidden layers per task (64, 32; relu) before each output head.  When raw
hand-crafted features are supplied, a :class:`~mtensemble.features.FeatureProjector`
maps them to the 128-wide feature block and trains with the ensemble loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as tc
from .errors import AlignmentError, ConfigurationError, DimensionError
from .features import FEATURE_WIDTH, FeatureProjector
from .layers import REPR_WIDTH, Dense, Layer
from .multitask import DROPOUT, stream
from .tensor import Tensor
from .training import History, TaskPrediction, TaskSpec, TrainConfig, fit, predict_outputs

BLOCK_ORDER = ("lstm", "cnn", "gru")
SHARED_WIDTHS = (256, 128)
TASK_WIDTHS = (64, 32)


@dataclass
class EnsembleInput:
    """Aligned rows: ``reps`` is ``[n, 384]`` in LSTM|CNN|GRU order, ``features`` is ``[n, F]``."""

    ids: list[str]
    reps: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def matrix(self) -> np.ndarray:
        return np.concatenate([self.reps, self.features], axis=1)

    def rows(self):
        return (self.reps, self.features)


def _index(source, name: str) -> dict[str, np.ndarray]:
    ids, matrix = source
    matrix = np.asarray(matrix, dtype=np.float64)
    if len(ids) != len(matrix):
        raise AlignmentError(f"source {name!r}: {len(ids)} ids for {len(matrix)} rows")
    return dict(zip(ids, matrix))


def assemble(ids: Sequence[str], reps: Mapping[str, tuple], features: tuple) -> EnsembleInput:
    """Align representation and feature sources by instance id.

    ``reps`` maps ``"lstm"``, ``"cnn"`` and ``"gru"`` to ``(ids, matrix)``;
    ``features`` is an ``(ids, matrix)`` pair.  Any id that is present in
    some source but not all, or requested but missing, raises
    :class:`AlignmentError`.
    """
    missing_blocks = [b for b in BLOCK_ORDER if b not in reps]
    if missing_blocks:
        raise AlignmentError(f"missing representation sources {missing_blocks}")
    sources = {b: _index(reps[b], b) for b in BLOCK_ORDER}
    sources["feat"] = _index(features, "feat")
    for name, src in sources.items():
        if name in BLOCK_ORDER and src and len(next(iter(src.values()))) != REPR_WIDTH:
            raise DimensionError(f"{name} representations must be {REPR_WIDTH} wide")
    every = set().union(*(s.keys() for s in sources.values()))
    for iid in sorted(every):
        absent = [n for n, s in sources.items() if iid not in s]
        if absent:
            raise AlignmentError(f"instance id {iid!r} missing from source(s) {absent}")
    for iid in ids:
        if iid not in every:
            raise AlignmentError(f"instance id {iid!r} missing from all sources")
    ids = list(ids)
    feat_width = len(next(iter(sources["feat"].values()))) if sources["feat"] else 0
    rep_rows = [np.concatenate([sources[b][i] for b in BLOCK_ORDER]) for i in ids]
    return EnsembleInput(
        ids,
        np.stack(rep_rows) if rep_rows else np.zeros((0, REPR_WIDTH * 3)),
        np.stack([sources["feat"][i] for i in ids]) if ids else np.zeros((0, feat_width)),
    )


class EnsembleModel(Layer):
    def __init__(self, tasks: Sequence[TaskSpec], seed: int = 0, raw_feature_width: int | None = None):
        tasks = list(tasks)
        if not tasks:
            raise ConfigurationError("the ensemble needs at least one task")
        self.tasks = tasks
        self.seed = seed
        self.raw_feature_width = raw_feature_width
        self.projector = (FeatureProjector(raw_feature_width, stream(seed, 50))
                          if raw_feature_width is not None else None)
        n_in = REPR_WIDTH * len(BLOCK_ORDER) + FEATURE_WIDTH
        self.shared = [Dense(n_in, SHARED_WIDTHS[0], "relu", stream(seed, 1)),
                       Dense(SHARED_WIDTHS[0], SHARED_WIDTHS[1], "relu", stream(seed, 2))]
        self.heads = {}
        for k, t in enumerate(tasks):
            rng = stream(seed, 100 + k)
            self.heads[t.name] = [Dense(SHARED_WIDTHS[1], TASK_WIDTHS[0], "relu", rng),
                                  Dense(TASK_WIDTHS[0], TASK_WIDTHS[1], "relu", rng),
                                  Dense(TASK_WIDTHS[1], t.out_width, t.head_activation, rng)]

    def descriptor(self) -> dict:
        return {
            "model": "ensemble",
            "tasks": [t.to_dict() for t in self.tasks],
            "blocks": list(BLOCK_ORDER) + ["feat"],
            "shared_widths": list(SHARED_WIDTHS),
            "task_widths": list(TASK_WIDTHS),
            "raw_feature_width": self.raw_feature_width,
            "dropout": DROPOUT,
        }

    def named_parameters(self) -> dict[str, Tensor]:
        params = {}
        if self.projector is not None:
            params.update({f"projector.{k}": p for k, p in self.projector.named_parameters().items()})
        for i, layer in enumerate(self.shared, 1):
            params.update({f"shared{i}.{k}": p for k, p in layer.named_parameters().items()})
        for name, layers in self.heads.items():
            labels = ("hidden1", "hidden2", "out")
            for label, layer in zip(labels, layers):
                params.update({f"heads.{name}.{label}.{k}": p for k, p in layer.named_parameters().items()})
        return params

    def head_parameters(self, task: str) -> dict[str, Tensor]:
        return {k: p for k, p in self.named_parameters().items() if k.startswith(f"heads.{task}.")}

    def prepare(self, batch):
        return batch

    def feature_block(self, features) -> Tensor:
        features = tc.as_tensor(features)
        if self.projector is not None:
            return self.projector(features)
        if features.shape[-1] != FEATURE_WIDTH:
            raise DimensionError(
                f"feature block is {features.shape[-1]} wide; expected {FEATURE_WIDTH} or a projector"
            )
        return features

    def forward(self, batch, training: bool = False, rng=None) -> dict[str, Tensor]:
        reps, features = batch
        h = tc.concat([tc.as_tensor(reps), self.feature_block(features)], axis=1)
        for layer in self.shared:
            h = tc.dropout(layer(h), DROPOUT, training, rng)
        outputs = {}
        for name, layers in self.heads.items():
            z = h
            for layer in layers:
                z = layer(z)
            outputs[name] = z
        return outputs

    def hidden_depth(self, task: str) -> int:
        """Number of hidden layers between the input and ``task``'s output."""
        return len(self.shared) + len(self.heads[task]) - 1


def train_ensemble(model: EnsembleModel, inputs: EnsembleInput, targets: dict[str, np.ndarray],
                   config: TrainConfig, val_inputs: EnsembleInput | None = None,
                   val_targets: dict[str, np.ndarray] | None = None) -> History:
    """Train the stacked MLP (and the feature projector, if any) on aligned inputs."""
    if val_inputs is not None and len(val_inputs):
        return fit(model, inputs.rows(), targets, config, val_inputs.rows(), val_targets)
    return fit(model, inputs.rows(), targets, config)


def predict_ensemble(model: EnsembleModel, inputs: EnsembleInput) -> dict[str, TaskPrediction]:
    return predict_outputs(model, inputs.rows())


def projected_features(model: EnsembleModel, inputs: EnsembleInput) -> np.ndarray:
    """The 128-d feature block for each row (through the projector when present)."""
    return model.feature_block(inputs.features).data
