"""Tour of the tensor substrate: tapes, backward sweeps, and the
finite-difference oracle that keeps every layer honest."""

import numpy as np

from kanfpn import tensor as T
from kanfpn.tensor import Tape, Tensor, finite_diff_grad

rng = np.random.default_rng(0)

print("== building a tracked computation ==")
tape = Tape()
w = tape.watch(Tensor(rng.standard_normal((4, 3)), dtype=np.float64))
x = Tensor(rng.standard_normal((3, 2)), dtype=np.float64)
loss = T.reduce_sum(T.silu(T.matmul(T.tanh(w), x)))
print(f"loss = {loss.item():.6f}  (tape recorded {len(tape)} nodes)")

grads = tape.backward(loss)
print(f"dL/dw shape {grads[w].shape}, first row {np.round(grads[w].data[0], 4)}")

print("\n== cross-checking against central differences ==")
def f(wt):
    return T.reduce_sum(T.silu(T.matmul(T.tanh(wt), x))).item()

numeric = finite_diff_grad(f, Tensor(w.data))
err = np.abs(grads[w].data - numeric.data).max()
print(f"max |analytic - numeric| = {err:.2e}")

print("\n== the tape is consumed by backward ==")
try:
    tape.backward(loss)
except Exception as exc:
    print(f"second backward correctly refused: {type(exc).__name__}: {exc}")

print("\n== broadcasting binary ops unbroadcast their gradients ==")
tape = Tape()
bias = tape.watch(Tensor(np.zeros((1, 3)), dtype=np.float64))
y = T.add(Tensor(rng.standard_normal((5, 3))), bias)
g = tape.backward(T.reduce_sum(T.mul(y, y)))
print(f"bias grad shape {g[bias].shape} (summed over the broadcast batch axis)")
