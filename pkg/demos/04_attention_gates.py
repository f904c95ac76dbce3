"""Channel-then-spatial attention gating and its quantified identities."""

import numpy as np

from kanfpn.cbam import CbamConfig, cbam, channel_attention, init_cbam, spatial_attention
from kanfpn.layers import Params
from kanfpn.tensor import Tensor

rng = np.random.default_rng(0)
cfg = CbamConfig(channels=8, reduction=4, spatial_kernel=7)
params = Params()
init_cbam(params, "gate", np.random.default_rng(1), cfg, np.float64)
x = Tensor(rng.standard_normal((1, 8, 12, 12)))

ca = channel_attention(x, params.values(), "gate")
sa = spatial_attention(x, params.values(), "gate")
print(f"channel gate {tuple(ca.shape)} in ({ca.data.min():.3f}, {ca.data.max():.3f})")
print(f"spatial gate {tuple(sa.shape)} in ({sa.data.min():.3f}, {sa.data.max():.3f})")

y = cbam(x, params.values(), "gate")
print(f"gated output preserves shape: {y.shape == x.shape}")
print(f"|output| <= |input| everywhere: {bool(np.all(np.abs(y.data) <= np.abs(x.data)))}")

print("\n== the zero-parameter regression anchor ==")
for p in params:
    params.set_value(p.name, np.zeros_like(p.value.data))
y0 = cbam(x, params.values(), "gate")
print(f"all-zero gates scale by exactly 0.25: {np.array_equal(y0.data, 0.25 * x.data)}")
