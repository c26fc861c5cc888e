#!/usr/bin/env python3
"""Walk through the layer kernels and check a conv gradient by hand.

Builds a small convolution, runs it forward against a naive loop oracle,
then compares the analytic backward pass with central finite differences.
"""

import numpy as np

from mtfer.layers import conv2d_backward, conv2d_forward, softmax
from mtfer.tensor import seeded_rng

rng = seeded_rng(0)

# forward: 6x6x2 image, 3x3 kernels, 4 output channels
x = rng.uniform(-1, 1, (6, 6, 2))
w = rng.uniform(-1, 1, (3, 3, 2, 4))
b = rng.uniform(-1, 1, 4)
y, cache = conv2d_forward(x, w, b)
print(f"conv2d: {x.shape} -> {y.shape}")

# naive oracle for one output position (same padding, stride 1)
yy, xx, o = 2, 3, 1
acc = b[o]
for dy in range(3):
    for dx in range(3):
        sy, sx = yy + dy - 1, xx + dx - 1
        if 0 <= sy < 6 and 0 <= sx < 6:
            acc += (x[sy, sx] * w[dy, dx, :, o]).sum()
print(f"output[{yy},{xx},{o}] = {y[yy, xx, o]:.12f}, naive loop = {acc:.12f}")

# backward vs central finite differences through a random scalar probe
probe = rng.uniform(-1, 1, y.shape)
gx, gw, gb = conv2d_backward(probe, cache)

eps = 1e-5
idx = (2, 3, 0)
orig = x[idx]
x[idx] = orig + eps
fp = (conv2d_forward(x, w, b)[0] * probe).sum()
x[idx] = orig - eps
fm = (conv2d_forward(x, w, b)[0] * probe).sum()
x[idx] = orig
numeric = (fp - fm) / (2 * eps)
print(f"d loss / d x{idx}: analytic {gx[idx]:.10f}, finite difference {numeric:.10f}")

# softmax: shift invariance and stability at huge logits
z = np.array([1000.0, 1001.0, 1002.0])
print("softmax([1000,1001,1002]) =", softmax(z))
print("softmax([0,1,2])          =", softmax(z - 1000.0))
