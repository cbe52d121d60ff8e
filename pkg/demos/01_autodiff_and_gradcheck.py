"""Reverse-mode autodiff on numpy arrays, checked against central differences.

Run: python3 demos/01_autodiff_and_gradcheck.py
"""

import numpy as np

from mtensemble import layers as L
from mtensemble import tensor as tc

rng = np.random.default_rng(0)

# A single dense layer: the analytic gradient should agree with finite
# differences to well under 1e-4 relative error.
dense = L.Dense(8, 4, "tanh", rng)
err = tc.gradient_check(dense, rng.normal(size=(5, 8)), list(dense.named_parameters().values()))
print(f"dense 8->4 tanh: max relative error {err:.2e}")

# ReLU and max pooling are piecewise linear.  Where a +-h probe crosses a
# switch point the finite difference is meaningless, so kink mode skips
# those coordinates instead of reporting a false failure.
W, b = tc.parameter(rng.normal(size=(6, 4))), tc.parameter(rng.normal(size=4))
op = lambda x: L.maxpool1d(tc.relu(L.conv1d(x, W, b, 3)), 2)
res = tc.gradient_check_detail(op, rng.normal(size=(2, 8, 2)), [W, b], skip_kinks=True)
print(f"conv+relu+pool: max error {res.max_error:.2e}, {res.n_checked} checked, {res.n_skipped} skipped")

# Adam with bias correction: with a constant unit gradient each step moves
# the weight by almost exactly the learning rate.
p = tc.parameter(np.zeros(1))
opt = tc.Adam({"w": p}, lr=0.001)
for step in (1, 2):
    opt.zero_grad()
    p.grad = np.ones(1)
    opt.step()
    print(f"adam step {step}: w = {p.data[0]:.9f}")
