"""
Autodiff engine and layers
==========================

Everything in ``olr`` trains on a small reverse-mode autodiff engine built on
numpy. This walk-through builds a tensor expression, checks its gradient
against finite differences, and runs the reference decoder stack to see its
per-layer output sizes.
"""

# %%
# A scalar expression and its gradient
# -------------------------------------
import numpy as np

from olr import layers as Ly
from olr import tensor as T
from olr.tensor import Tensor

x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
y = (T.sigmoid(x) * x).sum()
y.backward()
print("d/dx sum(sigmoid(x) * x) =", x.grad)

# the same derivative by hand: s + x s (1 - s)
s = 1 / (1 + np.exp(-x.data))
print("by hand                  =", s + x.data * s * (1 - s))

# %%
# Convolutions, and transposed convolution as its adjoint
# -------------------------------------------------------
# A stride-2 convolution and the matching transposed convolution satisfy
# <conv(x), y> == <x, conv_t(y)> for any x and y.
rng = np.random.default_rng(0)
xs = rng.standard_normal((1, 8, 8, 3))
ys = rng.standard_normal((1, 4, 4, 5))
w = rng.standard_normal((3, 3, 3, 5))
lhs = (T.conv2d(xs, w, None, 2, "same").data * ys).sum()
rhs = (xs * T.conv_transpose2d(ys, w, None, 2, "same").data).sum()
print(f"<conv x, y> = {lhs:.10f}   <x, conv_t y> = {rhs:.10f}")

# %%
# A finite-difference check on a tiny convolutional network
# ----------------------------------------------------------
w1 = Tensor(rng.standard_normal((3, 3, 3, 4)) * 0.3, requires_grad=True)
inp = rng.standard_normal((2, 6, 6, 3))


def loss_of(weight):
    h = T.relu(T.conv2d(inp, weight, None, 1, "same"))
    return (T.max_pool2d(h, 2) ** 2).mean()


analytic = T.grad(loss_of(w1), [w1])[0]
eps, idx = 1e-6, (1, 2, 0, 3)
bumped = w1.data.copy()
bumped[idx] += eps
numeric = (float(loss_of(Tensor(bumped)).data) - float(loss_of(w1).data)) / eps
print(f"one weight: analytic {analytic[idx]:.8f}, forward difference {numeric:.8f}")

# %%
# The reference decoder stack
# ---------------------------
# A (38, 32) embedding goes through a dense layer, five upsampling stages and a
# final colour convolution. The printed sizes are the layer-by-layer outputs.
net = Ly.Network(Ly.REFERENCE_DECODER, (38, 32))
for spec, out in zip(net.specs, net(np.zeros((1, 38, 32), np.float32), collect=True)):
    print(f"{spec.describe():40s} -> {tuple(out.shape[1:])}")
