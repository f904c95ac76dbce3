"""The seven front-end stages side by side: one token contract, widely
different capacity, plus the published full-scale reference numbers."""

import numpy as np

from kanfpn.harness import REFERENCE_AP
from kanfpn.layers import Params
from kanfpn.stem import StemConfig, StemVariant, init_stem, stem_forward
from kanfpn.tensor import Tensor

DESCRIPTIONS = {
    "s0": "16x16 patch embedding",
    "s1": "progressive four-conv stem",
    "s2": "residual backbone + feature pyramid",
    "s3": "pyramid + attention inside backbone blocks",
    "s4": "pyramid + gated laterals + polynomial smoothing",
    "s5": "pyramid + gated laterals",
    "s6": "pyramid with polynomial fusion everywhere",
}

x = Tensor(np.random.default_rng(0).random((1, 3, 64, 48), dtype=np.float32))
print(f"{'stage':<6} {'tokens':<10} {'params':>9} {'ref AP':>7}  description")
for key in ("s0", "s1", "s2", "s3", "s5", "s6", "s4"):
    cfg = StemConfig(variant=StemVariant.from_key(key))
    params = Params()
    init_stem(params, "stem", np.random.default_rng(0), cfg, (64, 48))
    tok = stem_forward(x, params.values(), "stem", cfg)
    grid = f"{tok.shape[1]}x{tok.shape[2]}"
    print(f"{key:<6} {grid:<10} {params.count():>9} {REFERENCE_AP[key]:>7.1f}  {DESCRIPTIONS[key]}")

print("\nEvery stage feeds the same encoder: identical token count and width.")
print("Reference AP values are full-scale published numbers, carried as metadata;")
print("the desk-scale harness reports PCK instead.")
