"""
Layers and their gradients
==========================

Every layer in ``chainhdr.layers`` is a pair of plain numpy functions: a
forward pass and a hand-written backward pass. This script walks through
the pieces of one subnetwork and checks each backward pass against central
finite differences.

Run: ``python demos/01_layers_and_gradients.py``
"""

# %%
import numpy as np

from chainhdr import gradsuite
from chainhdr import layers as L
from chainhdr import network as N

rng = np.random.default_rng(0)

# %% [markdown]
# Dilated 3x3 convolution keeps the spatial size (zero same-padding) for
# any dilation. Stacking the seven feature blocks gives a 67 pixel field of
# view, a little more than one 64x64 training patch.

# %%
x = rng.standard_normal((1, 3, 64, 64))
for d in N.DILATIONS:
    y = L.conv2d_dilated(x, rng.standard_normal((4, 3, 3, 3)), np.zeros(4), d)
    print(f"dilation {d:2d}: {x.shape[2:]} -> {y.shape[2:]}")
print("receptive field:", N.receptive_field(N.DILATIONS))

# %% [markdown]
# The two activations. PReLU scales the negative side, MPReLU scales the
# positive side and is its point reflection: mprelu(x) == -prelu(-x).

# %%
v = np.linspace(-2, 2, 9).reshape(1, 1, 9)
a = np.array([0.25])
print("x      ", v.ravel())
print("prelu  ", L.prelu(v, a).ravel())
print("mprelu ", L.mprelu(v, a).ravel())
assert np.array_equal(L.mprelu(v, a), -L.prelu(-v, a))

# %% [markdown]
# A fresh subnetwork has a zero output layer, so it maps every patch to
# itself. Training only has to learn the residual.

# %%
net = N.build_subnetwork(N.BRIGHTER, seed=0)
patch = rng.uniform(-1, 1, (3, 64, 64)).astype(np.float32)
print("parameters:", net.parameter_count(), " identity:", np.array_equal(N.subnetwork_forward(net, patch), patch))

# %% [markdown]
# The gradient suite: every layer (and a small full subnetwork, both
# directions) against longdouble central differences, five seeds.

# %%
entries, seconds = gradsuite.run_suite(seeds=range(5))
for name in dict.fromkeys(e.name for e in entries):
    worst = max(e.max_rel_error for e in entries if e.name == name)
    print(f"{name:28s} worst relative error {worst:.2e}")
print(f"{len(entries)} checks in {seconds:.1f}s")
