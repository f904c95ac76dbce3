"""Polynomial-basis (KAGN) convolution layers.

The layer squashes its input with tanh, expands it in a Gram/Legendre
polynomial basis built by the three-term recurrence, and convolves the
stacked basis images alongside a plain SiLU base path:

    y = norm( conv(silu(x), W_base) + conv(basis(tanh(x), D), W_poly) )

The bottleneck variant wraps this in bias-free 1x1 reduce/expand convs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import DomainViolation, InvalidSpec
from .imageops import conv2d, norm2d
from .layers import Params, _n, _uniform, init_norm
from .tensor import Tensor

__all__ = [
    "KagnConvConfig", "gram_basis", "kagn_conv2d", "bottleneck_kagn_conv2d",
    "kagn_param_count", "init_kagn_conv", "init_bottleneck_kagn_conv",
]


@dataclass
class KagnConvConfig:
    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    padding: int = None
    degree: int = 3
    groups: int = 1
    bottleneck_ratio: int = 1      # 1 means no channel reduction

    def __post_init__(self):
        if self.padding is None:
            self.padding = self.kernel // 2

    def validate(self) -> None:
        if self.in_ch < 1 or self.out_ch < 1 or self.kernel < 1:
            raise InvalidSpec("channel counts and kernel must be positive")
        if self.degree < 0:
            raise InvalidSpec("polynomial degree must be >= 0")
        if self.in_ch % self.groups or self.out_ch % self.groups:
            raise InvalidSpec(f"channels ({self.in_ch}, {self.out_ch}) not divisible by groups={self.groups}")
        if self.bottleneck_ratio < 1:
            raise InvalidSpec("bottleneck_ratio must be >= 1")
        if self.mid_ch < 1:
            raise InvalidSpec(f"bottleneck reduces {self.in_ch} channels to zero (ratio {self.bottleneck_ratio})")

    @property
    def mid_ch(self) -> int:
        return self.in_ch // self.bottleneck_ratio


def gram_basis(s: Tensor, degree: int) -> Tensor:
    """Stack basis images G_0..G_D along channels (degree-major order).

    G_0 = 1, G_1 = s, (d+1) G_{d+1} = (2d+1) s G_d - d G_{d-1}; requires |s| <= 1.
    """
    if degree < 0:
        raise InvalidSpec("degree must be >= 0")
    if np.abs(s.data).max() > 1.0 + 1e-6:
        raise DomainViolation(f"basis input leaves [-1, 1]: max |s| = {np.abs(s.data).max():.6g}")
    ones = Tensor(np.ones_like(s.data))
    polys = [ones]
    if degree >= 1:
        polys.append(s)
    for d in range(1, degree):
        nxt = T.scale(T.sub(T.scale(T.mul(s, polys[d]), 2 * d + 1), T.scale(polys[d - 1], d)),
                      1.0 / (d + 1))
        polys.append(nxt)
    return T.concat(polys, axis=1) if len(polys) > 1 else polys[0]


def init_kagn_conv(params: Params, prefix: str, rng, cfg: KagnConvConfig, dtype=np.float32) -> None:
    """Register base/poly conv weights and the trailing norm affine."""
    cfg.validate()
    cin = cfg.in_ch // cfg.groups
    k = cfg.kernel
    params.add(_n(prefix, "base_w"), _uniform(rng, (cfg.out_ch, cin, k, k), cin * k * k, dtype))
    pin = cin * (cfg.degree + 1)
    params.add(_n(prefix, "poly_w"), _uniform(rng, (cfg.out_ch, pin, k, k), pin * k * k, dtype))
    init_norm(params, _n(prefix, "norm"), cfg.out_ch, dtype)


def _group_major(basis: Tensor, channels: int, degree: int, groups: int) -> Tensor:
    # regroup degree-major stacking so conv groups see their own channels
    if groups == 1:
        return basis
    B, _, H, W = basis.shape
    b5 = T.reshape(basis, (B, degree + 1, groups, channels // groups, H, W))
    b5 = T.transpose(b5, (0, 2, 1, 3, 4, 5))
    return T.reshape(b5, (B, channels * (degree + 1), H, W))


def kagn_conv2d(x: Tensor, p: Mapping[str, Tensor], prefix: str, cfg: KagnConvConfig,
                eps: float = 1e-5) -> Tensor:
    cfg.validate()
    if x.shape[1] != cfg.in_ch:
        raise InvalidSpec(f"input has {x.shape[1]} channels, config expects {cfg.in_ch}")
    base = conv2d(T.silu(x), p[_n(prefix, "base_w")], stride=cfg.stride,
                  padding=cfg.padding, groups=cfg.groups)
    basis = _group_major(gram_basis(T.tanh(x), cfg.degree), cfg.in_ch, cfg.degree, cfg.groups)
    poly = conv2d(basis, p[_n(prefix, "poly_w")], stride=cfg.stride,
                  padding=cfg.padding, groups=cfg.groups)
    return norm2d(T.add(base, poly), p[_n(prefix, "norm.gamma")], p[_n(prefix, "norm.beta")], eps)


def init_bottleneck_kagn_conv(params: Params, prefix: str, rng, cfg: KagnConvConfig,
                              dtype=np.float32) -> None:
    cfg.validate()
    mid = cfg.mid_ch
    params.add(_n(prefix, "reduce_w"), _uniform(rng, (mid, cfg.in_ch, 1, 1), cfg.in_ch, dtype))
    init_kagn_conv(params, prefix, rng, _inner_cfg(cfg), dtype)
    params.add(_n(prefix, "expand_w"), _uniform(rng, (cfg.out_ch, mid, 1, 1), mid, dtype))


def _inner_cfg(cfg: KagnConvConfig) -> KagnConvConfig:
    mid = cfg.mid_ch
    return KagnConvConfig(in_ch=mid, out_ch=mid, kernel=cfg.kernel, stride=cfg.stride,
                          padding=cfg.padding, degree=cfg.degree, groups=cfg.groups)


def bottleneck_kagn_conv2d(x: Tensor, p: Mapping[str, Tensor], prefix: str,
                           cfg: KagnConvConfig, eps: float = 1e-5) -> Tensor:
    """1x1 reduce, polynomial conv at full kernel, 1x1 expand; all convs bias-free."""
    cfg.validate()
    y = conv2d(x, p[_n(prefix, "reduce_w")])
    y = kagn_conv2d(y, p, prefix, _inner_cfg(cfg), eps)
    return conv2d(y, p[_n(prefix, "expand_w")])


def kagn_param_count(cfg: KagnConvConfig) -> int:
    """Exact trainable scalar count of the configured layer."""
    cfg.validate()
    k = cfg.kernel

    def plain(in_ch, out_ch):
        cin = in_ch // cfg.groups
        return out_ch * cin * k * k + out_ch * cin * (cfg.degree + 1) * k * k + 2 * out_ch

    if cfg.bottleneck_ratio == 1:
        return plain(cfg.in_ch, cfg.out_ch)
    mid = cfg.mid_ch
    return mid * cfg.in_ch + plain(mid, mid) + cfg.out_ch * mid
