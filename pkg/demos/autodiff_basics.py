#!/usr/bin/env python3
"""A tour of the tensor core underneath the forecasters."""
import numpy as np

from sst import tensor as T

# Parameters are leaves that collect gradients; constants do not.
w = T.parameter(np.array([[0.5, -1.0], [2.0, 0.25]]))
x = T.constant(np.array([[1.0, 3.0]]))

with T.record() as tape:
    y = T.matmul(x, w)
    loss = T.mul(y, y).sum()
T.backward(tape, loss)
print("loss =", loss.item())
print("dloss/dw =\n", w.grad)

# Ops run outside a record() context are plain forward arithmetic: no
# tape entry, no backward closures, no gradient memory.
silent = T.matmul(x, w)
print("inference result, nothing recorded:", silent.data.tolist())

# Every differentiable op can be checked against central differences.
err = T.gradient_check(lambda: T.softplus(w).mean(), [w])
print(f"softplus gradient vs finite differences: rel err {err:.2e}")

# Checked mode traps the first non-finite value at the op that made it,
# instead of letting a NaN surface three modules later.
try:
    T.div(T.constant(np.ones(2)), T.constant(np.zeros(2)))
except Exception as exc:
    print("checked mode caught:", type(exc).__name__)

# The allocation meter watches live tensor bytes; benchmarks use it to
# emulate running out of memory at a chosen ceiling.
T.meter.reset_peak()
with T.record() as tape:
    big = T.mul(T.parameter(np.ones((512, 512))), T.constant(np.full((), 2.0)))
    total = big.sum()
T.backward(tape, total)
print(f"peak live tensor bytes for the block above: "
      f"{T.meter.peak_bytes / 1e6:.2f} MB")
