"""Loading a dataset, splitting it, and round-tripping a model checkpoint.

Run: python3 demos/07_data_and_checkpoints.py
"""

import tempfile
from pathlib import Path

import numpy as np

from mtensemble import data as D
from mtensemble import multitask as mt
from mtensemble.synthetic import corpus_vocab, keyword_corpus, random_embeddings
from mtensemble.training import TaskSpec

corpus = keyword_corpus(100, seed=2)
train, val, test = D.split(corpus, seed=0)
print(f"70/10/20 split of {len(corpus)}: {len(train)}/{len(val)}/{len(test)}")
print("10-fold test sizes:", [len(f[1]) for f in D.kfold(corpus, k=10, seed=0)])

table = random_embeddings(corpus_vocab(corpus), dim=16, seed=2)
tasks = [TaskSpec.classification("emotion", ("joy", "sadness")), TaskSpec.regression("intensity")]
model = mt.build_model("gru", tasks, table, seed=5, max_len=12)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "gru.ckpt"
    D.save_checkpoint(model, path)
    descriptor, seed, params = D.read_checkpoint(path)
    print(f"checkpoint: {path.stat().st_size} bytes, encoder={descriptor['encoder']}, "
          f"seed={seed}, {len(params)} tensors")
    fresh = mt.build_model("gru", tasks, table, seed=99, max_len=12)
    D.load_checkpoint(path, fresh)
    same = all(np.array_equal(p.data, fresh.named_parameters()[k].data)
               for k, p in model.named_parameters().items())
    print("reloaded parameters identical:", same)

    reps = mt.representation_matrix(model, test)
    D.write_matrix_tsv(Path(tmp) / "reps.tsv", [i.id for i in test], reps)
    ids, back = D.read_matrix_tsv(Path(tmp) / "reps.tsv", width=128)
    print(f"representation TSV round trip: {len(ids)} rows, max abs diff {np.abs(back - reps).max():.1e}")
