"""Inside the polynomial convolution: the Gram/Legendre basis, the
SiLU base path, and the bottleneck wrapper used as the FPN smoother."""

import numpy as np

from kanfpn.imageops import conv2d, norm2d
from kanfpn import tensor as T
from kanfpn.kagn import (KagnConvConfig, bottleneck_kagn_conv2d, gram_basis,
                         init_bottleneck_kagn_conv, init_kagn_conv, kagn_conv2d,
                         kagn_param_count)
from kanfpn.layers import Params
from kanfpn.tensor import Tensor

print("== basis polynomials from the three-term recurrence ==")
pts = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
basis = gram_basis(Tensor(pts.reshape(1, 1, 1, 5)), 3).data[0, :, 0]
for d in range(4):
    print(f"G_{d}({pts.tolist()}) = {np.round(basis[d], 4).tolist()}")

print("\n== capacity grows linearly with degree ==")
for degree in (0, 1, 3, 5):
    cfg = KagnConvConfig(16, 16, kernel=3, degree=degree)
    print(f"degree {degree}: {kagn_param_count(cfg):6d} parameters")

print("\n== zeroing the polynomial path leaves a plain conv block ==")
cfg = KagnConvConfig(3, 4, kernel=3, degree=3)
params = Params()
init_kagn_conv(params, "k", np.random.default_rng(0), cfg, np.float64)
params.set_value("k.poly_w", np.zeros_like(params["k.poly_w"].value.data))
x = Tensor(np.random.default_rng(1).standard_normal((1, 3, 6, 6)))
pm = params.values()
lhs = kagn_conv2d(x, pm, "k", cfg).data
rhs = norm2d(conv2d(T.silu(x), pm["k.base_w"], padding=1),
             pm["k.norm.gamma"], pm["k.norm.beta"]).data
print(f"exact equality: {np.array_equal(lhs, rhs)}")

print("\n== bottleneck variant: reduce, polynomial conv, expand ==")
bcfg = KagnConvConfig(32, 32, kernel=3, degree=3, bottleneck_ratio=4)
bparams = Params()
init_bottleneck_kagn_conv(bparams, "s", np.random.default_rng(2), bcfg, np.float64)
y = bottleneck_kagn_conv2d(Tensor(np.random.default_rng(3).standard_normal((1, 32, 8, 8))),
                           bparams.values(), "s", bcfg)
plain = kagn_param_count(KagnConvConfig(32, 32, kernel=3, degree=3))
print(f"output {tuple(y.shape)}; {kagn_param_count(bcfg)} params "
      f"vs {plain} without the bottleneck")
