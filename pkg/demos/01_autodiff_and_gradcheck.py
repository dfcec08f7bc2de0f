"""Walk through the reverse-mode tensor engine and its gradient checker.

Builds a tiny expression graph by hand, backpropagates, and compares the
analytic gradients against central finite differences — the same machinery
the `vesseldistill gradcheck` subcommand runs across every primitive.
"""

import numpy as np

from vesseldistill import tensor as T
from vesseldistill.checks import run_suite
from vesseldistill.tensor import Tensor, gradcheck

# A small graph: y = mean(sigmoid(conv(x, k) )). Everything is numpy
# underneath; each op records a closure that routes gradients backwards.
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(1, 6, 6)), requires_grad=True)
k = Tensor(rng.normal(scale=0.5, size=(2, 1, 3, 3)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)

y = T.tmean(T.sigmoid(T.conv2d(x, k, b)))
print(f"forward value: {y.item():.6f}")

y.backward()
print(f"dL/dx norm:   {np.linalg.norm(x.grad):.6f}")
print(f"dL/dk norm:   {np.linalg.norm(k.grad):.6f}")

# Verify one input against finite differences directly.
ok, worst = gradcheck(lambda x: T.tmean(T.sigmoid(T.conv2d(x, k, b))), (x,))
print(f"gradcheck on x: {'ok' if ok else 'FAILED'} (worst abs err {worst:.2e})")

# The full suite covers every primitive plus the end-to-end losses.
results = run_suite(seeds=range(2))
passed = sum(r["ok"] for r in results)
print(f"suite: {passed}/{len(results)} checks passed over 2 seeds")
