"""The three sentence encoders and what they produce.

Run: python3 demos/02_encoders.py
"""

import numpy as np

from mtensemble import layers as L
from mtensemble.tensor import Tensor
from mtensemble.synthetic import random_embeddings

rng = np.random.default_rng(1)
table = random_embeddings(["the", "movie", "was", "great", "awful"], dim=300, seed=1)
batch = L.embed_batch([["the", "movie", "was", "great"], ["awful", "zzz-unknown"]], table, L.MAX_LEN)
print("embedded batch:", batch.shape, "(unknown tokens map to zero vectors)")

for name in ("cnn", "lstm", "gru"):
    enc = L.ENCODERS[name](table.dim, rng)
    out = enc(Tensor(batch))
    n_params = sum(p.size for p in enc.named_parameters().values())
    print(f"{name:4s}: output {out.shape}, {n_params:,} parameters")
