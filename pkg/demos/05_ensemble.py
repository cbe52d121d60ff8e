"""Stacking: three encoders see different slices of the signal, the ensemble sees all.

In the complementary corpus each encoder's embedding table only carries
the cue words of one family, and the lexicon features carry a fourth.  No
base model can solve the task alone; the stacked MLP over their
representations plus the features can.  This takes a minute or two.

Run: python3 demos/05_ensemble.py
"""

from mtensemble import data as D
from mtensemble import ensemble as ens
from mtensemble import evaluation as ev
from mtensemble import features as F
from mtensemble import multitask as mt
from mtensemble.synthetic import complementary_corpus, corpus_vocab, feature_lexicons, random_embeddings, source_table
from mtensemble.training import TaskSpec, TrainConfig, task_targets

corpus = complementary_corpus(600, seed=0)
full = random_embeddings(corpus_vocab(corpus), seed=0)
train, val, test = D.split(corpus, seed=0)
parts = {"train": train, "val": val, "test": test}
tasks = [TaskSpec.classification("polarity", ("neg", "pos")), TaskSpec.regression("intensity")]
config = TrainConfig(epochs=30, patience=30, seed=0)
gold = [i.label for i in test]

reps = {}
for encoder in ens.BLOCK_ORDER:
    model = mt.build_model(encoder, tasks, source_table(full, encoder), seed=0, max_len=20)
    mt.train(model, train, val, config)
    acc = ev.accuracy(gold, mt.predict(model, test)["polarity"].labels)
    print(f"base {encoder}: accuracy {acc:.3f}")
    reps[encoder] = {n: ([i.id for i in p], mt.representation_matrix(model, p)) for n, p in parts.items()}

extractor = F.FeatureExtractor(full, feature_lexicons(), components=("lexicon",)).fit([i.text for i in train])


def inputs(name):
    ids = [i.id for i in parts[name]]
    raw = extractor.transform([i.text for i in parts[name]])
    return ens.assemble(ids, {e: reps[e][name] for e in ens.BLOCK_ORDER}, (ids, raw))


model = ens.EnsembleModel(tasks, seed=0, raw_feature_width=extractor.width)
ens.train_ensemble(model, inputs("train"), task_targets(train, tasks), config,
                   inputs("val"), task_targets(val, tasks))
pred = ens.predict_ensemble(model, inputs("test"))
print(f"ensemble: accuracy {ev.accuracy(gold, pred['polarity'].labels):.3f}")
