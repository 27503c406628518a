"""
A tour of the autodiff core
===========================

Everything in the model is built from a small reverse-mode engine over
numpy arrays. This script builds a tiny computation, checks its gradient
against central differences, and takes a few Adam steps.
"""

import numpy as np

from gitcd import autodiff as ad
from gitcd.autodiff import Tensor

rng = np.random.default_rng(0)

# A Tensor wraps an array; operators record the graph for backward().
x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
loss = ad.sum(ad.softmax(x @ w, axis=1) ** 2)
loss.backward()
print("loss:", float(loss.data))
print("dL/dw:\n", w.grad)

# The same function, checked against central differences.
# The returned number is the largest relative disagreement.
err = ad.finite_diff_check(lambda a, b: ad.sum(ad.softmax(a @ b, axis=1) ** 2), [x.data, w.data])
print(f"finite-difference error: {err:.2e}")

# Masked scores: the sentinel keeps padded columns out of the softmax.
scores = Tensor(np.array([[1.0, 2.0, 3.0]]))
mask = np.array([[False, False, True]])
print("masked softmax:", ad.softmax(ad.masked_fill(scores, mask), axis=1).data)

# Minimize a quadratic bowl with Adam. The weight decay is added to the gradient.
theta = [np.array([3.0, -2.0])]
state = ad.AdamState(lr=0.1, weight_decay=0.0)
for step in range(200):
    grads = ad.grad(lambda t: ad.sum((t - 1.0) ** 2), theta)
    theta, state = ad.adam_step(theta, grads, state)
print("Adam minimum near [1, 1]:", theta[0].round(3))
