"""Metrics: accuracy from a confusion matrix, Pearson, the dependent variant, and a t-test.

Run: python3 demos/06_evaluation.py
"""

import numpy as np

from mtensemble import evaluation as ev

classes = ["anger", "joy", "fear", "sadness"]
counts = np.array([[718, 31, 29, 33], [11, 657, 25, 12], [16, 17, 901, 80], [15, 9, 40, 548]])
gold = [c for g, row in zip(classes, counts) for p, n in zip(classes, row) for c in [g] * n]
pred = [p for g, row in zip(classes, counts) for p, n in zip(classes, row) for _ in range(n)]
cm = ev.confusion(gold, pred, classes)
print(cm.to_tsv(), end="")
print(f"accuracy {cm.accuracy():.4f}")

# Dependent Pearson only scores intensities where the class was predicted correctly.
r, used = ev.dependent_pearson(["A", "A", "B"], ["A", "B", "B"], [0.1, 0.2, 0.3], [0.2, 0.9, 0.4])
print(f"dependent pearson r={r} over {used} of 3 instances")

x = [0.1, 0.4, 0.35, 0.8, 0.7]
y = [0.15, 0.35, 0.4, 0.75, 0.8]
print(f"pearson r={ev.pearson(x, y):.5f}")

a, b = ev.normal_samples(0.80, seed=0), ev.normal_samples(0.75, seed=1)
t, p = ev.paired_t_test(a, b)
print(f"paired t-test on two score samples: t={t:.3f} p={p:.4f}")
