import numpy as np
import pytest

from mtensemble import multitask as mt
from mtensemble import tensor as tc
from mtensemble.errors import ConfigurationError, NumericError
from mtensemble.synthetic import corpus_vocab, keyword_corpus, random_embeddings
from mtensemble.training import TaskSpec, TrainConfig, joint_loss, task_targets

EMOTIONS = ("anger", "fear", "joy", "sadness")
COARSE = [TaskSpec.classification("emotion", EMOTIONS), TaskSpec.regression("intensity")]
VAD = [TaskSpec.regression(n) for n in ("valence", "arousal", "dominance")]


@pytest.fixture(scope="module")
def corpus():
    return keyword_corpus(40, classes=EMOTIONS, seed=5)


@pytest.fixture(scope="module")
def small_table(corpus):
    return random_embeddings(corpus_vocab(corpus), dim=12, seed=1)


@pytest.fixture(scope="module")
def glove_like_table(corpus):
    return random_embeddings(corpus_vocab(corpus), dim=300, seed=1)


class TestBuild:
    def test_coarse_heads(self, small_table):
        model = mt.build_model("lstm", COARSE, small_table)
        assert [(h.out.n_out, h.out.activation) for h in model.heads.values()] == [(4, "softmax"), (1, "sigmoid")]

    def test_vad_heads(self, small_table):
        model = mt.build_model("gru", VAD, small_table)
        assert [h.out.activation for h in model.heads.values()] == ["sigmoid"] * 3

    def test_single_task(self, small_table):
        model = mt.build_model("cnn", VAD[:1], small_table)
        assert list(model.heads) == ["valence"]

    def test_no_tasks(self, small_table):
        with pytest.raises(ConfigurationError):
            mt.build_model("cnn", [], small_table)

    def test_unknown_encoder(self, small_table):
        with pytest.raises(ConfigurationError):
            mt.build_model("transformer", COARSE, small_table)


class TestPredict:
    @pytest.mark.parametrize("encoder", ["cnn", "lstm", "gru"])
    def test_ranges(self, encoder, small_table, corpus):
        out = mt.predict(mt.build_model(encoder, COARSE, small_table, max_len=12), corpus)
        np.testing.assert_allclose(out["emotion"].values.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((out["intensity"].scores >= 0) & (out["intensity"].scores <= 1))
        assert set(out["emotion"].labels) <= set(EMOTIONS)

    @pytest.mark.parametrize("encoder", ["cnn", "lstm", "gru"])
    def test_untrained_is_near_uniform(self, encoder, glove_like_table, corpus):
        probs = mt.predict(mt.build_model(encoder, COARSE, glove_like_table, seed=0), corpus)["emotion"].values
        assert probs.min() >= 0.25 - 0.1 and probs.max() <= 0.25 + 0.1


class TestRepresentation:
    def test_properties(self, small_table, corpus):
        model = mt.build_model("cnn", COARSE, small_table, max_len=12)
        recs = mt.extract_representation(model, corpus)
        assert [r.instance_id for r in recs] == [i.id for i in corpus]
        assert all(r.vector.shape == (128,) and np.all(r.vector >= 0) for r in recs)
        again = mt.extract_representation(model, corpus[3:4] + corpus[3:4])
        np.testing.assert_array_equal(again[0].vector, recs[3].vector)
        np.testing.assert_array_equal(again[1].vector, recs[3].vector)


class TestGradientIsolation:
    @pytest.mark.parametrize("encoder", ["cnn", "lstm", "gru"])
    def test_step_on_one_task_leaves_other_head(self, encoder, small_table, corpus):
        model = mt.build_model(encoder, COARSE, small_table, max_len=12)
        params = model.named_parameters()
        optim = tc.Adam(params)
        frozen = {k: p.data.copy() for k, p in model.head_parameters("intensity").items()}
        optim.zero_grad()
        x = model.prepare([i.text.split() for i in corpus[:8]])
        outputs = model.forward(x, training=True, rng=np.random.default_rng(0))
        task = COARSE[0]
        tc.loss(outputs["emotion"], task_targets(corpus[:8], [task])["emotion"], task.loss_kind).backward()
        for k in frozen:
            assert not params[k].grad.any()
        assert any(p.grad.any() for p in model.head_parameters("emotion").values())
        optim.step()
        for k, before in frozen.items():
            assert np.array_equal(params[k].data, before)


class TestTrain:
    def test_one_epoch(self, small_table, corpus):
        model = mt.build_model("gru", COARSE, small_table, max_len=12)
        history = mt.train(model, corpus[:30], corpus[30:], TrainConfig(epochs=1))
        assert len(history) == 1 and history.best_epoch == 1

    def test_zero_epochs_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(epochs=0)

    def test_deterministic(self, small_table, corpus):
        runs = []
        for _ in range(2):
            model = mt.build_model("lstm", COARSE, small_table, seed=4, max_len=12)
            history = mt.train(model, corpus[:30], corpus[30:], TrainConfig(epochs=3, seed=4))
            runs.append((history.to_tsv(), model.named_parameters()))
        assert runs[0][0] == runs[1][0]
        for k, p in runs[0][1].items():
            assert np.array_equal(p.data, runs[1][1][k].data)

    def test_single_task_equivalence(self, small_table, corpus):
        config = TrainConfig(epochs=2, seed=1)
        singles = mt.train_single_task_models("cnn", COARSE, small_table, corpus[:30], corpus[30:], config,
                                              seed=3, max_len=12)
        for task in COARSE:
            baseline = mt.build_model("cnn", [task], small_table, seed=3, max_len=12)
            history = mt.train(baseline, corpus[:30], corpus[30:], config)
            model, single_history = singles[task.name]
            assert history.to_tsv() == single_history.to_tsv()
            for k, p in baseline.named_parameters().items():
                assert np.array_equal(p.data, model.named_parameters()[k].data)

    def test_nan_aborts_with_location(self, small_table, corpus):
        model = mt.build_model("gru", COARSE, small_table, max_len=12)
        model.heads["intensity"].out.b.data[0] = np.nan
        with pytest.raises(NumericError, match="epoch 1, batch 1"):
            mt.train(model, corpus[:30], [], TrainConfig(epochs=2))

    def test_task_weights_scale_loss(self, small_table, corpus):
        model = mt.build_model("lstm", COARSE, small_table, max_len=12)
        x = model.prepare([i.text.split() for i in corpus[:6]])
        outputs = model.forward(x)
        y = task_targets(corpus[:6], COARSE)
        per, total = joint_loss(outputs, y, COARSE, TrainConfig(task_weights={"intensity": 3.0}))
        assert total.item() == pytest.approx(per["emotion"].item() + 3 * per["intensity"].item(), rel=1e-15)

    def test_best_parameters_restored(self, small_table, corpus):
        model = mt.build_model("lstm", COARSE, small_table, max_len=12)
        history = mt.train(model, corpus[:30], corpus[30:], TrainConfig(epochs=4, patience=1))
        assert history.best_epoch <= len(history)
        from mtensemble.training import evaluate_loss
        val = evaluate_loss(model, [i.text.split() for i in corpus[30:]], task_targets(corpus[30:], COARSE))
        best = history.epochs[history.best_epoch - 1].val_total
        assert sum(val.values()) == pytest.approx(best, rel=1e-12)
