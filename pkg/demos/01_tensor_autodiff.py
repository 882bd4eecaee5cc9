#!/usr/bin/env python3
"""Tour of the tensor engine: ops, the tape, and gradient checking.

Everything downstream (warping, blocks, losses) is built from these
primitives, so this demo doubles as a sanity walkthrough of the autodiff
core.
"""

import numpy as np

import dmvfn.tensor as T
from dmvfn.tensor import Tensor

rng = np.random.default_rng(0)

# --- forward ops -----------------------------------------------------------
x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
k = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
bias = Tensor(np.zeros(1, dtype=np.float32))
y = T.conv2d(x, k, bias, stride=1, padding=1)
print("conv of all-ones 3x3 with all-ones 3x3 kernel, pad 1:")
print(y.data[0, 0])  # center 9 (full overlap), corners 4

row = Tensor(np.array([[[[0.0, 1.0]]]], dtype=np.float32))
print("\nbilinear resize [0,1] -> width 4 (half-pixel centers):", T.bilinear_resize(row, 1, 4).data.ravel())

# --- reverse mode ----------------------------------------------------------
w = Tensor(np.array([1.0, 2.0, -3.0], dtype=np.float32), requires_grad=True)
loss = T.sum_all(T.mul(w, w))  # sum of squares -> gradient 2w
loss.backward()
print("\nd/dw sum(w^2) at", w.data, "->", w.grad)

# straight-through estimator: binary forward, identity backward
probs = Tensor(np.array([0.1, 0.5, 0.9], dtype=np.float32), requires_grad=True)
sample = T.ste_bernoulli(probs, rng)
scale = Tensor(np.array([10.0, 20.0, 30.0], dtype=np.float32))
T.sum_all(T.mul(sample, scale)).backward()
print("STE sample", sample.data, "passes gradient", probs.grad, "straight to the probabilities")

# --- gradients vs finite differences ----------------------------------------
a = Tensor(rng.random((2, 3, 5, 5)), requires_grad=True, dtype=np.float64)
k2 = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.5, requires_grad=True, dtype=np.float64)
b2 = Tensor(np.zeros(4), requires_grad=True, dtype=np.float64)
out = T.mean_all(T.conv2d(a, k2, b2, padding=1))
out.backward()

h = 1e-5
flat = a.data.reshape(-1)
idx = rng.integers(0, flat.size, size=5)
print("\nconv gradient vs central differences (5 random coordinates):")
for c in idx:
    orig = flat[c]
    flat[c] = orig + h
    fp = float(T.mean_all(T.conv2d(Tensor(a.data), Tensor(k2.data), Tensor(b2.data), padding=1)).data)
    flat[c] = orig - h
    fm = float(T.mean_all(T.conv2d(Tensor(a.data), Tensor(k2.data), Tensor(b2.data), padding=1)).data)
    flat[c] = orig
    fd = (fp - fm) / (2 * h)
    print(f"  coord {c:3d}: analytic {a.grad.reshape(-1)[c]: .8f}  fd {fd: .8f}")
