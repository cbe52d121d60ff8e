import numpy as np
import pytest

from mtensemble import ensemble as ens
from mtensemble import tensor as tc
from mtensemble.errors import AlignmentError, ConfigurationError, DimensionError
from mtensemble.evaluation import accuracy
from mtensemble.training import TaskSpec, TrainConfig

TASKS = [TaskSpec.classification("emotion", ("joy", "sadness", "fear")), TaskSpec.regression("intensity")]


def _sources(ids, rng, feat_width=128):
    reps = {b: (list(ids), rng.normal(size=(len(ids), 128))) for b in ens.BLOCK_ORDER}
    return reps, (list(ids), rng.normal(size=(len(ids), feat_width)))


class TestAssemble:
    def test_single_zero_instance(self):
        reps = {b: (["a"], np.zeros((1, 128))) for b in ens.BLOCK_ORDER}
        out = ens.assemble(["a"], reps, (["a"], np.zeros((1, 128))))
        assert out.matrix.shape == (1, 512) and not out.matrix.any()

    def test_block_order_fixed(self, rng):
        ids = ["a", "b", "c"]
        reps, feats = _sources(ids, rng)
        forward = ens.assemble(ids, reps, feats)
        backward = ens.assemble(ids, dict(reversed(list(reps.items()))), feats)
        np.testing.assert_array_equal(forward.matrix, backward.matrix)
        np.testing.assert_array_equal(forward.matrix[:, 128:256], reps["cnn"][1])
        np.testing.assert_array_equal(forward.matrix[:, 384:], feats[1])

    def test_rows_follow_requested_ids(self, rng):
        reps, feats = _sources(["a", "b", "c"], rng)
        out = ens.assemble(["c", "a"], reps, feats)
        np.testing.assert_array_equal(out.reps[0, :128], reps["lstm"][1][2])

    def test_missing_id_is_named(self, rng):
        reps, feats = _sources(["a", "b"], rng)
        reps["gru"] = (["a", "x"], reps["gru"][1])
        with pytest.raises(AlignmentError, match="'b'"):
            ens.assemble(["a", "b"], reps, feats)

    def test_missing_source(self, rng):
        reps, feats = _sources(["a"], rng)
        del reps["cnn"]
        with pytest.raises(AlignmentError):
            ens.assemble(["a"], reps, feats)

    def test_wrong_rep_width(self, rng):
        reps, feats = _sources(["a"], rng)
        reps["lstm"] = (["a"], np.zeros((1, 64)))
        with pytest.raises(DimensionError):
            ens.assemble(["a"], reps, feats)


class TestModel:
    def test_depth_and_heads(self):
        model = ens.EnsembleModel(TASKS)
        assert all(model.hidden_depth(t.name) == 4 for t in TASKS)
        assert [l.n_out for l in model.shared] == [256, 128]
        assert [l.n_out for l in model.heads["emotion"]] == [64, 32, 3]

    def test_needs_tasks(self):
        with pytest.raises(ConfigurationError):
            ens.EnsembleModel([])

    def test_feature_width_without_projector(self, rng):
        reps, feats = _sources(["a"], rng, feat_width=10)
        with pytest.raises(DimensionError):
            ens.predict_ensemble(ens.EnsembleModel(TASKS), ens.assemble(["a"], reps, feats))

    def test_predict_ranges(self, rng):
        ids = [f"i{k}" for k in range(7)]
        inputs = ens.assemble(ids, *_sources(ids, rng, feat_width=20))
        out = ens.predict_ensemble(ens.EnsembleModel(TASKS, raw_feature_width=20), inputs)
        assert list(out) == ["emotion", "intensity"]
        np.testing.assert_allclose(out["emotion"].values.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((out["intensity"].scores >= 0) & (out["intensity"].scores <= 1))

    def test_gradients(self):
        rng = np.random.default_rng(11)
        model = ens.EnsembleModel(TASKS, raw_feature_width=9)
        reps = rng.normal(size=(3, 384))
        w = {"emotion": rng.normal(size=(3, 3)), "intensity": rng.normal(size=(3, 1))}

        def op(x):
            out = model.forward((x[:, :384], x[:, 384:]))
            return tc.concat([out["emotion"] * tc.Tensor(w["emotion"]),
                              out["intensity"] * tc.Tensor(w["intensity"])], axis=1)

        x = np.concatenate([reps, rng.normal(size=(3, 9))], axis=1)
        err = tc.gradient_check(op, x, model.named_parameters().values(), sample=20)
        assert err < 1e-4


def _one_hot_inputs(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    block = np.zeros((n, 128))
    block[np.arange(n), labels] = 1.0
    ids = [f"o{k}" for k in range(n)]
    reps = {b: (ids, block) for b in ens.BLOCK_ORDER}
    inputs = ens.assemble(ids, reps, (ids, block))
    y = np.eye(2)[labels]
    return inputs, {"emotion": y}, labels


class TestTraining:
    tasks = [TaskSpec.classification("emotion", ("neg", "pos"))]

    def test_one_hot_is_learned(self):
        inputs, targets, labels = _one_hot_inputs(200, 0)
        model = ens.EnsembleModel(self.tasks, seed=0)
        history = ens.train_ensemble(model, inputs, targets, TrainConfig(epochs=5))
        assert len(history) <= 5
        pred = ens.predict_ensemble(model, inputs)["emotion"].labels
        assert accuracy([("neg", "pos")[k] for k in labels], pred) == 1.0

    def test_deterministic(self):
        inputs, targets, _ = _one_hot_inputs(60, 1)
        runs = []
        for _ in range(2):
            model = ens.EnsembleModel(self.tasks, seed=2)
            runs.append(ens.train_ensemble(model, inputs, targets, TrainConfig(epochs=3, seed=2)).to_tsv())
        assert runs[0] == runs[1]

    def test_projector_trains_with_ensemble(self, rng):
        ids = [f"i{k}" for k in range(20)]
        inputs = ens.assemble(ids, *_sources(ids, rng, feat_width=6))
        model = ens.EnsembleModel(TASKS, raw_feature_width=6)
        before = model.projector.hidden.W.data.copy()
        targets = {"emotion": np.eye(3)[rng.integers(0, 3, 20)], "intensity": rng.uniform(size=(20, 1))}
        ens.train_ensemble(model, inputs, targets, TrainConfig(epochs=1))
        assert not np.array_equal(before, model.projector.hidden.W.data)

    def test_heads_are_independent_at_inference(self, rng):
        ids = [f"i{k}" for k in range(5)]
        inputs = ens.assemble(ids, *_sources(ids, rng))
        model = ens.EnsembleModel(TASKS)
        before = ens.predict_ensemble(model, inputs)
        for p in model.head_parameters("intensity").values():
            p.data += 0.5
        after = ens.predict_ensemble(model, inputs)
        np.testing.assert_array_equal(before["emotion"].values, after["emotion"].values)
        assert not np.array_equal(before["intensity"].values, after["intensity"].values)
