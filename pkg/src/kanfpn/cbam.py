"""Convolutional block attention: channel gating then spatial gating."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import InvalidSpec
from .imageops import conv2d, pool2d
from .layers import Params, _n, _uniform
from .tensor import Tensor

__all__ = ["CbamConfig", "init_cbam", "channel_attention", "spatial_attention", "cbam"]


@dataclass
class CbamConfig:
    channels: int
    reduction: int = 8
    spatial_kernel: int = 7

    def validate(self) -> None:
        if self.channels // self.reduction < 1:
            raise InvalidSpec(f"reduction {self.reduction} leaves no hidden channels for C={self.channels}")
        if self.spatial_kernel % 2 == 0:
            raise InvalidSpec("spatial kernel must be odd")


def init_cbam(params: Params, prefix: str, rng, cfg: CbamConfig, dtype=np.float32) -> None:
    cfg.validate()
    c, mid, k = cfg.channels, cfg.channels // cfg.reduction, cfg.spatial_kernel
    params.add(_n(prefix, "mlp1_w"), _uniform(rng, (mid, c, 1, 1), c, dtype))
    params.add(_n(prefix, "mlp2_w"), _uniform(rng, (c, mid, 1, 1), mid, dtype))
    params.add(_n(prefix, "spatial_w"), _uniform(rng, (1, 2, k, k), 2 * k * k, dtype))


def channel_attention(x: Tensor, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    """sigmoid(MLP(avg pool) + MLP(max pool)), one gate per channel."""
    w1, w2 = p[_n(prefix, "mlp1_w")], p[_n(prefix, "mlp2_w")]

    def excite(pooled):
        return conv2d(T.relu(conv2d(pooled, w1)), w2)

    avg = excite(pool2d("global_avg", x))
    mx = excite(pool2d("global_max", x))
    return T.sigmoid(T.add(avg, mx))


def spatial_attention(x: Tensor, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    """sigmoid(conv([mean_c, max_c])), one gate per pixel."""
    w = p[_n(prefix, "spatial_w")]
    k = w.shape[-1]
    stats = T.concat([T.reduce_mean(x, axis=1, keepdims=True),
                      T.reduce_max(x, axis=1, keepdims=True)], axis=1)
    return T.sigmoid(conv2d(stats, w, padding=(k - 1) // 2))


def cbam(x: Tensor, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Channel-then-spatial gated copy of the input; shape preserved."""
    x = T.mul(x, channel_attention(x, p, prefix))
    return T.mul(x, spatial_attention(x, p, prefix))
