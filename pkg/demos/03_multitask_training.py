"""Train one multi-task network per encoder on a small synthetic corpus.

Each network has a shared trunk and one head per task: emotion
classification (softmax) and intensity regression (sigmoid).  The
keyword corpus is easy on purpose, so a few epochs are enough.

Run: python3 demos/03_multitask_training.py
"""

from mtensemble import data as D
from mtensemble import evaluation as ev
from mtensemble import multitask as mt
from mtensemble.synthetic import corpus_vocab, keyword_corpus, random_embeddings
from mtensemble.training import TaskSpec, TrainConfig

corpus = keyword_corpus(300, classes=("joy", "sadness"), seed=0)
table = random_embeddings(corpus_vocab(corpus), seed=0)
train, val, test = D.split(corpus, seed=0)
print(f"split: {len(train)} train / {len(val)} val / {len(test)} test")

tasks = [TaskSpec.classification("emotion", ("joy", "sadness")), TaskSpec.regression("intensity")]
config = TrainConfig(epochs=10, patience=10, seed=0)

for encoder in ("cnn", "lstm", "gru"):
    model = mt.build_model(encoder, tasks, table, seed=0, max_len=20)
    history = mt.train(model, train, val, config)
    pred = mt.predict(model, test)
    acc = ev.accuracy([i.label for i in test], pred["emotion"].labels)
    r = ev.pearson([i.scores["intensity"] for i in test], pred["intensity"].scores)
    reps = mt.representation_matrix(model, test)
    print(f"{encoder:4s}: best epoch {history.best_epoch}, accuracy {acc:.3f}, "
          f"intensity r {r:.3f}, representation {reps.shape}")
