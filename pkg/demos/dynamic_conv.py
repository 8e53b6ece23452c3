"""Decomposable dynamic convolution and its memory accounting."""
import numpy as np

from pillarkit import DDConv
from pillarkit.ddconv import combine, memory_ratio, param_count, similarity_loss
from pillarkit.numcore import ops

rng = np.random.default_rng(0)
layer = DDConv(c_in=4, c_out=6, kernel=3, num_bases=3, rng=rng, dtype=np.float64)
x = rng.standard_normal((8, 8, 4))

out = layer.forward(x)
coeffs = layer.last_coefficients
print("output", out.shape, "coefficient map", coeffs.shape)

# The per-position kernels are never built during the forward pass; build
# them here once and check one output position by hand.
kernels = layer.params["shared"] + combine(coeffs, layer.params["bases"])
i, j = 4, 5
patch = np.pad(x, ((1, 1), (1, 1), (0, 0)))[i:i + 3, j:j + 3]
by_hand = np.einsum("abc,abco->o", patch, kernels[i, j]) + layer.params["bias"]
print("position (4, 5) matches materialized kernel:", np.allclose(out[i, j], by_hand, atol=1e-12))

# With the coefficients pinned to zero only the shared kernel is left.
layer.coeff_override = np.zeros(3)
plain, _ = ops.conv2d_forward(x, layer.params["shared"], 1, "same")
print("zero coefficients reduce to a plain conv:", np.array_equal(layer.forward(x), plain))
layer.coeff_override = None

loss, _ = similarity_loss(layer.params["bases"])
print(f"basis similarity at init {loss:.4f}")

# Memory of the generated filters against fully position-dependent kernels.
counts = param_count(1, 386, 20, 248, 216, 3)
print(f"1x1 head: {counts['dynamic_basis']:,} basis weights vs {counts['per_position']:,} per-position weights")
print(f"3x3, 128->128 at 248x216: per-position kernels are {1 / memory_ratio(3, 128, 128, 248, 216, 3):,.0f}x larger")
