"""The bottom-up pathway: spatial ops and the residual backbone's
four-scale feature pyramid."""

import numpy as np

from kanfpn.imageops import conv2d, pool2d, upsample_nearest2x
from kanfpn.layers import Params
from kanfpn.stem import StemConfig, StemVariant, backbone_forward, init_backbone
from kanfpn.tensor import Tensor

rng = np.random.default_rng(0)

print("== convolution geometry ==")
x = Tensor(rng.standard_normal((1, 3, 16, 16)).astype(np.float32))
w = Tensor(0.1 * rng.standard_normal((8, 3, 3, 3)).astype(np.float32))
for stride in (1, 2):
    y = conv2d(x, w, stride=stride, padding=1)
    print(f"stride {stride}: {tuple(x.shape)} -> {tuple(y.shape)}")

print("\n== upsample + average pool round-trips exactly ==")
small = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
back = pool2d("avg", upsample_nearest2x(small), k=2, s=2)
print(f"identity holds: {np.array_equal(back.data, small.data)}")

print("\n== residual backbone pyramid at 64x64 ==")
cfg = StemConfig(variant=StemVariant.S2_FPN)
params = Params()
init_backbone(params, "bb", np.random.default_rng(1), cfg)
img = Tensor(rng.random((1, 3, 64, 64), dtype=np.float32))
pyr = backbone_forward(img, params.values(), "bb", cfg)
for name in pyr.names():
    t = pyr[name]
    stride = 64 // t.shape[2]
    print(f"{name}: {tuple(t.shape)}  (stride {stride})")
pyr.check_halving()
print("extents halve exactly level to level")
