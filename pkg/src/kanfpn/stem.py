"""Front-end variants: the seven stage configurations between pixels and tokens.

Every variant ends in the same contract: a [B, T, D] token tensor on a
stride-16 grid, so one transformer encoder serves all of them.

  s0  single-shot 16x16 patch embedding
  s1  progressive four-conv stem, stride 2 each
  s2  residual backbone + feature pyramid, plain 1x1 laterals, 3x3 smoothing
  s3  s2 with attention gates inside every backbone block
  s4  s2 with gated laterals and a bottleneck polynomial smoothing conv
  s5  s2 with gated laterals only
  s6  s2 with polynomial laterals and per-level polynomial smoothing

Pyramid levels c2..c5 sit at strides 4/8/16/32; fusion is nearest-neighbor
upsample + add down to p2, and only the smoothed p2 feeds the encoder via a
4x4 stride-4 projection.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as T
from .cbam import CbamConfig, cbam, init_cbam
from .errors import InvalidGeometry, InvalidSpec, ShapeMismatch
from .imageops import conv2d, crop2d, norm2d, pool2d, upsample_nearest2x
from .kagn import KagnConvConfig, bottleneck_kagn_conv2d, init_bottleneck_kagn_conv, init_kagn_conv, kagn_conv2d
from .layers import Params, _n, _zeros, conv_block, init_conv, init_conv_block, init_norm
from .tensor import Tensor

__all__ = [
    "StemVariant", "BackboneConfig", "StemConfig", "FeaturePyramid",
    "init_stem", "stem_forward", "patch_embed", "cnn_stem",
    "backbone_forward", "fpn_fuse", "token_grid",
]


class StemVariant(enum.Enum):
    S0_PATCH = "s0"
    S1_CNN_STEM = "s1"
    S2_FPN = "s2"
    S3_BACKBONE_CBAM = "s3"
    S4_CBAM_KAGN = "s4"
    S5_LATERAL_CBAM = "s5"
    S6_KAGN_FUSE = "s6"

    @classmethod
    def from_key(cls, key: str) -> "StemVariant":
        for v in cls:
            if v.value == key:
                return v
        raise InvalidSpec(f"unknown stem variant {key!r} (expected s0..s6)")

    @property
    def uses_backbone(self) -> bool:
        return self not in (StemVariant.S0_PATCH, StemVariant.S1_CNN_STEM)


# lateral / smoothing wiring per pyramid variant
_LATERAL = {
    StemVariant.S2_FPN: "conv",
    StemVariant.S3_BACKBONE_CBAM: "conv",
    StemVariant.S4_CBAM_KAGN: "cbam",
    StemVariant.S5_LATERAL_CBAM: "cbam",
    StemVariant.S6_KAGN_FUSE: "kagn",
}
_SMOOTH = {
    StemVariant.S2_FPN: "conv",
    StemVariant.S3_BACKBONE_CBAM: "conv",
    StemVariant.S4_CBAM_KAGN: "bottleneck_kagn",
    StemVariant.S5_LATERAL_CBAM: "conv",
    StemVariant.S6_KAGN_FUSE: "kagn_all",
}


@dataclass
class BackboneConfig:
    """Four-stage residual backbone emitting c2..c5 at strides 4/8/16/32."""
    widths: tuple = (16, 32, 64, 128)
    blocks: tuple = (2, 2, 2, 2)
    cbam_in_blocks: bool = False

    def validate(self) -> None:
        if len(self.widths) != 4 or len(self.blocks) != 4:
            raise InvalidSpec("backbone needs exactly 4 stage widths and block counts")
        if any(w < 1 for w in self.widths) or any(b < 1 for b in self.blocks):
            raise InvalidSpec("stage widths and block counts must be positive")


@dataclass
class StemConfig:
    variant: StemVariant = StemVariant.S4_CBAM_KAGN
    embed_dim: int = 64
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    fpn_width: int = 32
    kagn_degree: int = 3
    kagn_bottleneck: int = 4
    cbam_reduction: int = 8
    cbam_spatial_kernel: int = 7
    smooth_norm: bool = True   # disable only for linear-path analysis

    @property
    def blocks_use_cbam(self) -> bool:
        return self.backbone.cbam_in_blocks or self.variant is StemVariant.S3_BACKBONE_CBAM

    def cbam_cfg(self, channels: int) -> CbamConfig:
        return CbamConfig(channels, self.cbam_reduction, self.cbam_spatial_kernel)

    def lateral_kagn_cfg(self, in_ch: int) -> KagnConvConfig:
        return KagnConvConfig(in_ch, self.fpn_width, kernel=1, degree=self.kagn_degree)

    def smooth_kagn_cfg(self, bottleneck: bool) -> KagnConvConfig:
        return KagnConvConfig(self.fpn_width, self.fpn_width, kernel=3, degree=self.kagn_degree,
                              bottleneck_ratio=self.kagn_bottleneck if bottleneck else 1)


@dataclass
class FeaturePyramid:
    """Ordered level name -> feature map (c2..c5 bottom-up or p2..p5 fused)."""
    levels: dict

    def __getitem__(self, key: str) -> Tensor:
        return self.levels[key]

    def names(self) -> list[str]:
        return list(self.levels)

    def check_halving(self) -> None:
        # exact halving when the input divides 32; ceil halving otherwise
        maps = list(self.levels.values())
        for hi, lo in zip(maps, maps[1:]):
            for ax in (2, 3):
                if lo.shape[ax] != (hi.shape[ax] + 1) // 2:
                    raise ShapeMismatch(
                        f"pyramid extents do not halve: {tuple(hi.shape)} over {tuple(lo.shape)}")


def token_grid(height: int, width: int) -> tuple:
    return height // 16, width // 16


# ---------------------------------------------------------------------------
# s0: patch embedding

def init_patch_embed(params: Params, prefix: str, rng, embed_dim: int, grid, dtype=np.float32):
    init_conv(params, _n(prefix, "proj.w"), rng, embed_dim, 3, 16, 16, dtype)
    params.add(_n(prefix, "proj.b"), _zeros((embed_dim,), dtype))
    params.add(_n(prefix, "pos"), _zeros((1, grid[0] * grid[1], embed_dim), dtype))


def _to_tokens(fm: Tensor, pos: Tensor) -> Tensor:
    B, D, h, w = fm.shape
    tok = T.transpose(T.reshape(fm, (B, D, h * w)), (0, 2, 1))
    return T.add(tok, pos)


def patch_embed(x: Tensor, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    B, C, H, W = x.shape
    if H % 16 or W % 16:
        raise InvalidGeometry(f"patch embedding needs extents divisible by 16, got {H}x{W}")
    fm = conv2d(x, p[_n(prefix, "proj.w")], p[_n(prefix, "proj.b")], stride=16)
    return _to_tokens(fm, p[_n(prefix, "pos")])


# ---------------------------------------------------------------------------
# s1: progressive conv stem

def init_cnn_stem(params: Params, prefix: str, rng, cfg: StemConfig, grid, dtype=np.float32):
    widths = cfg.backbone.widths
    chans = [3, *widths]
    for i in range(4):
        init_conv_block(params, _n(prefix, f"c{i + 1}"), rng, chans[i], chans[i + 1], 3, dtype)
    init_conv(params, _n(prefix, "proj.w"), rng, cfg.embed_dim, widths[-1], 1, 1, dtype)
    params.add(_n(prefix, "proj.b"), _zeros((cfg.embed_dim,), dtype))
    params.add(_n(prefix, "pos"), _zeros((1, grid[0] * grid[1], cfg.embed_dim), dtype))


def cnn_stem(x: Tensor, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    B, C, H, W = x.shape
    if H % 16 or W % 16:
        raise InvalidGeometry(f"conv stem needs extents divisible by 16, got {H}x{W}")
    y = x
    for i in range(4):
        y = conv_block(y, p, _n(prefix, f"c{i + 1}"), stride=2)
    fm = conv2d(y, p[_n(prefix, "proj.w")], p[_n(prefix, "proj.b")])
    return _to_tokens(fm, p[_n(prefix, "pos")])


# ---------------------------------------------------------------------------
# s2..s6: residual backbone

def init_backbone(params: Params, prefix: str, rng, cfg: StemConfig, dtype=np.float32):
    bb = cfg.backbone
    bb.validate()
    use_cbam = cfg.blocks_use_cbam
    init_conv_block(params, _n(prefix, "conv1"), rng, 3, bb.widths[0], 3, dtype)
    in_ch = bb.widths[0]
    for si, (width, nblocks) in enumerate(zip(bb.widths, bb.blocks)):
        for bi in range(nblocks):
            bp = _n(prefix, f"s{si + 1}.b{bi}")
            stride = 2 if (si > 0 and bi == 0) else 1
            init_conv_block(params, _n(bp, "conv1"), rng, in_ch, width, 3, dtype)
            init_conv(params, _n(bp, "conv2.w"), rng, width, width, 3, 3, dtype)
            init_norm(params, _n(bp, "conv2"), width, dtype)
            if in_ch != width or stride != 1:
                init_conv(params, _n(bp, "short.w"), rng, width, in_ch, 1, 1, dtype)
                init_norm(params, _n(bp, "short"), width, dtype)
            if use_cbam:
                init_cbam(params, _n(bp, "cbam"), rng, cfg.cbam_cfg(width), dtype)
            in_ch = width


def _residual_block(x: Tensor, p: Mapping[str, Tensor], prefix: str, stride: int,
                    with_cbam: bool) -> Tensor:
    br = conv_block(x, p, _n(prefix, "conv1"), stride=stride)
    br = conv2d(br, p[_n(prefix, "conv2.w")], padding=1)
    br = norm2d(br, p[_n(prefix, "conv2.gamma")], p[_n(prefix, "conv2.beta")])
    if with_cbam:
        br = cbam(br, p, _n(prefix, "cbam"))
    if _n(prefix, "short.w") in p:
        sc = conv2d(x, p[_n(prefix, "short.w")], stride=stride)
        sc = norm2d(sc, p[_n(prefix, "short.gamma")], p[_n(prefix, "short.beta")])
    else:
        sc = x
    return T.relu(T.add(br, sc))


def backbone_forward(x: Tensor, p: Mapping[str, Tensor], prefix: str,
                     cfg: StemConfig) -> FeaturePyramid:
    B, C, H, W = x.shape
    if H % 16 or W % 16:
        raise InvalidGeometry(f"backbone needs extents divisible by 16, got {H}x{W}")
    bb = cfg.backbone
    y = conv_block(x, p, _n(prefix, "conv1"), stride=2)
    y = pool2d("max", y, k=2, s=2)
    levels = {}
    for si, (width, nblocks) in enumerate(zip(bb.widths, bb.blocks)):
        for bi in range(nblocks):
            stride = 2 if (si > 0 and bi == 0) else 1
            y = _residual_block(y, p, _n(prefix, f"s{si + 1}.b{bi}"), stride, cfg.blocks_use_cbam)
        levels[f"c{si + 2}"] = y
    return FeaturePyramid(levels)


# ---------------------------------------------------------------------------
# feature pyramid fusion

def init_fpn(params: Params, prefix: str, rng, cfg: StemConfig, dtype=np.float32):
    lateral_kind = _LATERAL[cfg.variant]
    smooth_kind = _SMOOTH[cfg.variant]
    for level, width in zip((2, 3, 4, 5), cfg.backbone.widths):
        lp = _n(prefix, f"lat{level}")
        if lateral_kind == "kagn":
            init_kagn_conv(params, _n(lp, "kagn"), rng, cfg.lateral_kagn_cfg(width), dtype)
            continue
        if lateral_kind == "cbam":
            init_cbam(params, _n(lp, "cbam"), rng, cfg.cbam_cfg(width), dtype)
        init_conv(params, _n(lp, "conv.w"), rng, cfg.fpn_width, width, 1, 1, dtype)
    if smooth_kind == "conv":
        init_conv(params, _n(prefix, "smooth2.conv.w"), rng, cfg.fpn_width, cfg.fpn_width, 3, 3, dtype)
        if cfg.smooth_norm:
            init_norm(params, _n(prefix, "smooth2.norm"), cfg.fpn_width, dtype)
    elif smooth_kind == "bottleneck_kagn":
        init_bottleneck_kagn_conv(params, _n(prefix, "smooth2.kagn"), rng,
                                  cfg.smooth_kagn_cfg(bottleneck=True), dtype)
    else:
        for level in (2, 3, 4, 5):
            init_kagn_conv(params, _n(prefix, f"smooth{level}.kagn"), rng,
                           cfg.smooth_kagn_cfg(bottleneck=False), dtype)


def fpn_fuse(pyr: FeaturePyramid, p: Mapping[str, Tensor], prefix: str,
             cfg: StemConfig) -> Tensor:
    """Fuse c2..c5 top-down and return the smoothed highest-resolution map."""
    pyr.check_halving()
    lateral_kind = _LATERAL[cfg.variant]
    smooth_kind = _SMOOTH[cfg.variant]

    laterals = {}
    for level, width in zip((2, 3, 4, 5), cfg.backbone.widths):
        x = pyr[f"c{level}"]
        lp = _n(prefix, f"lat{level}")
        if lateral_kind == "kagn":
            laterals[level] = kagn_conv2d(x, p, _n(lp, "kagn"), cfg.lateral_kagn_cfg(width))
        else:
            if lateral_kind == "cbam":
                x = cbam(x, p, _n(lp, "cbam"))
            laterals[level] = conv2d(x, p[_n(lp, "conv.w")])

    fused = laterals[5]
    for level in (4, 3, 2):
        lat = laterals[level]
        up = crop2d(upsample_nearest2x(fused), lat.shape[2], lat.shape[3])
        fused = T.add(lat, up)

    if smooth_kind == "conv":
        y = conv2d(fused, p[_n(prefix, "smooth2.conv.w")], padding=1)
        if cfg.smooth_norm:
            y = norm2d(y, p[_n(prefix, "smooth2.norm.gamma")], p[_n(prefix, "smooth2.norm.beta")])
        return y
    if smooth_kind == "bottleneck_kagn":
        return bottleneck_kagn_conv2d(fused, p, _n(prefix, "smooth2.kagn"),
                                      cfg.smooth_kagn_cfg(bottleneck=True))
    # per-level smoothing exists in the parameter set, but only p2 is consumed
    return kagn_conv2d(fused, p, _n(prefix, "smooth2.kagn"), cfg.smooth_kagn_cfg(bottleneck=False))


# ---------------------------------------------------------------------------
# unified stem

def init_stem(params: Params, prefix: str, rng, cfg: StemConfig, extent, dtype=np.float32):
    """Register all parameters of the chosen variant for a fixed input extent."""
    H, W = extent
    grid = token_grid(H, W)
    if grid[0] < 1 or grid[1] < 1:
        raise InvalidGeometry(f"input {H}x{W} too small for a stride-16 token grid")
    if cfg.variant is StemVariant.S0_PATCH:
        init_patch_embed(params, prefix, rng, cfg.embed_dim, grid, dtype)
        return
    if cfg.variant is StemVariant.S1_CNN_STEM:
        init_cnn_stem(params, prefix, rng, cfg, grid, dtype)
        return
    init_backbone(params, _n(prefix, "backbone"), rng, cfg, dtype)
    init_fpn(params, _n(prefix, "fpn"), rng, cfg, dtype)
    init_conv(params, _n(prefix, "proj.w"), rng, cfg.embed_dim, cfg.fpn_width, 4, 4, dtype)
    params.add(_n(prefix, "proj.b"), _zeros((cfg.embed_dim,), dtype))
    params.add(_n(prefix, "pos"), _zeros((1, grid[0] * grid[1], cfg.embed_dim), dtype))


def stem_forward(x: Tensor, p: Mapping[str, Tensor], prefix: str, cfg: StemConfig) -> Tensor:
    """Map images [B, 3, H, W] to tokens [B, (H/16)(W/16), embed_dim]."""
    if cfg.variant is StemVariant.S0_PATCH:
        return patch_embed(x, p, prefix)
    if cfg.variant is StemVariant.S1_CNN_STEM:
        return cnn_stem(x, p, prefix)
    pyr = backbone_forward(x, p, _n(prefix, "backbone"), cfg)
    p2 = fpn_fuse(pyr, p, _n(prefix, "fpn"), cfg)
    fm = conv2d(p2, p[_n(prefix, "proj.w")], p[_n(prefix, "proj.b")], stride=4)
    return _to_tokens(fm, p[_n(prefix, "pos")])
