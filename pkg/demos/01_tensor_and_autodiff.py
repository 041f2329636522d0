"""Tensor engine walkthrough: rearrange, stable softmax, and the tape.

Run:  python demos/01_tensor_and_autodiff.py
"""

import numpy as np

from dit4d import nn
from dit4d.tensor import (Tensor, backward, linear, rearrange, softmax_lastaxis,
                          square, tsum)

rng = np.random.default_rng(0)

# --- rearrange: the reshape language every attention block is built on -------
grid = Tensor(rng.normal(size=(2, 3, 4, 4, 8)))  # (view, time, h, w, channel)
spatial = rearrange(grid, "v t h w c -> (v t) (h w) c")
print("spatial arrangement:", grid.shape, "->", spatial.shape)

back = rearrange(spatial, "(v t) (h w) c -> v t h w c", v=2, h=4)
print("inverse pattern restores the grid bit-exactly:",
      np.array_equal(back.data, grid.data))

# --- numerically stable softmax ----------------------------------------------
hot = softmax_lastaxis(Tensor([[1000.0, 1000.5, 999.0]]))
print("softmax of huge logits stays finite:", hot.data.round(4), "sum:",
      hot.data.sum())

# --- reverse-mode autodiff -----------------------------------------------------
x = Tensor(rng.normal(size=(5, 3)))
w = nn.Parameter(rng.normal(size=(3, 2)), group="spatial")
b = nn.Parameter(np.zeros(2), group="spatial")

loss = tsum(square(linear(x, w.tensor, b.tensor)))
backward(loss)
print("loss:", round(loss.item(), 4), "| grad shapes:",
      w.tensor.grad.shape, b.tensor.grad.shape)

# central differences agree with the tape
err = nn.finite_diff_check(
    lambda: tsum(square(linear(x, w.tensor, b.tensor))), [w, b],
    entries_per_param=None)
print(f"finite-difference check, max relative error: {err:.2e}")
