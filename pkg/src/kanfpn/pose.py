"""Encoder-decoder heatmap pose pipeline.

Tokens from any stem variant pass through a plain pre-norm transformer
encoder; a small deconvolutional head upsamples them back to stride-4
keypoint heatmaps. Targets are unnormalized Gaussians, the loss is MSE over
visible keypoint channels, and predictions decode by sub-pixel argmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import InvalidSpec, ShapeMismatch
from .imageops import conv2d
from .layers import (Params, _n, _zeros, deconv_block, init_conv, init_deconv_block,
                     init_norm, init_transformer_block, layer_norm, transformer_block)
from .stem import StemConfig, StemVariant, init_stem, stem_forward, token_grid
from .tensor import Tensor

__all__ = [
    "PoseModelConfig", "Keypoints", "PoseModel", "build_pose_model",
    "encode", "heatmap_head", "render_targets", "mse_loss",
    "decode_keypoints", "pck", "write_predictions_csv",
]


@dataclass
class PoseModelConfig:
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    num_keypoints: int = 8
    heatmap_stride: int = 4
    input_extent: tuple = (64, 64)
    sigma: float = 2.0

    def validate(self) -> None:
        if self.embed_dim % self.heads:
            raise InvalidSpec(f"embed dim {self.embed_dim} not divisible by heads {self.heads}")
        H, W = self.input_extent
        if H % 16 or W % 16:
            raise InvalidSpec(f"input extent {H}x{W} must divide the stride-16 token grid")

    @property
    def heatmap_extent(self) -> tuple:
        H, W = self.input_extent
        return H // self.heatmap_stride, W // self.heatmap_stride


@dataclass
class Keypoints:
    """Per-sample keypoints in input-image pixel coordinates."""
    xy: np.ndarray                 # [K, 2] as (x, y)
    visible: np.ndarray            # [K] bool
    score: np.ndarray = None       # [K] peak values for decoded predictions

    @property
    def count(self) -> int:
        return len(self.xy)


# ---------------------------------------------------------------------------
# encoder and head

def init_encoder(params: Params, prefix: str, rng, cfg: PoseModelConfig, dtype=np.float32):
    for i in range(cfg.depth):
        init_transformer_block(params, _n(prefix, f"block{i}"), rng,
                               cfg.embed_dim, cfg.heads, cfg.mlp_ratio, dtype)
    init_norm(params, _n(prefix, "final_ln"), cfg.embed_dim, dtype)


def encode(tokens: Tensor, p: Mapping[str, Tensor], prefix: str, depth: int, heads: int) -> Tensor:
    y = tokens
    for i in range(depth):
        y = transformer_block(y, p, _n(prefix, f"block{i}"), heads)
    return layer_norm(y, p[_n(prefix, "final_ln.gamma")], p[_n(prefix, "final_ln.beta")])


def init_heatmap_head(params: Params, prefix: str, rng, cfg: PoseModelConfig, dtype=np.float32):
    d = cfg.embed_dim
    init_deconv_block(params, _n(prefix, "up1"), rng, d, d, 4, dtype)
    init_deconv_block(params, _n(prefix, "up2"), rng, d, d, 4, dtype)
    init_conv(params, _n(prefix, "out.w"), rng, cfg.num_keypoints, d, 1, 1, dtype)
    params.add(_n(prefix, "out.b"), _zeros((cfg.num_keypoints,), dtype))


def heatmap_head(feat: Tensor, grid, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Tokens [B, T, D] -> heatmaps [B, K, 4h, 4w] for a (h, w) token grid."""
    B, t, D = feat.shape
    h, w = grid
    if t != h * w:
        raise ShapeMismatch(f"{t} tokens cannot fill a {h}x{w} grid")
    fm = T.reshape(T.transpose(feat, (0, 2, 1)), (B, D, h, w))
    fm = deconv_block(fm, p, _n(prefix, "up1"))
    fm = deconv_block(fm, p, _n(prefix, "up2"))
    return conv2d(fm, p[_n(prefix, "out.w")], p[_n(prefix, "out.b")])


# ---------------------------------------------------------------------------
# targets, loss, decoding, metric

def render_targets(kps: Sequence[Keypoints], extent, stride: int = 4,
                   sigma: float = 2.0, dtype=np.float32) -> Tensor:
    """Unit-peak Gaussian per visible keypoint at heatmap scale; zeros if hidden."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    hh, ww = extent
    K = kps[0].count
    out = np.zeros((len(kps), K, hh, ww), dtype=dtype)
    ys, xs = np.mgrid[0:hh, 0:ww]
    for b, sample in enumerate(kps):
        for k in range(K):
            if not sample.visible[k]:
                continue
            cx, cy = sample.xy[k] / stride
            out[b, k] = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
    return Tensor(out)


def mse_loss(pred: Tensor, target: Tensor, visible: np.ndarray) -> Tensor:
    """Mean squared error over visible-keypoint channels only."""
    if tuple(pred.shape) != tuple(target.shape):
        raise ShapeMismatch(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    B, K, hh, ww = pred.shape
    mask = np.asarray(visible, dtype=pred.dtype).reshape(B, K, 1, 1)
    n_vis = float(mask.sum())
    if n_vis == 0:
        return T.scale(T.reduce_sum(T.mul(pred, Tensor(np.zeros_like(mask)))), 0.0)
    d = T.sub(pred, target)
    sq = T.mul(T.mul(d, d), Tensor(mask))
    return T.scale(T.reduce_sum(sq), 1.0 / (n_vis * hh * ww))


def decode_keypoints(pred: Tensor, stride: int = 4) -> list:
    """Argmax with quarter-cell refinement toward the larger neighbor."""
    hm = pred.data
    B, K, hh, ww = hm.shape
    out = []
    for b in range(B):
        xy = np.zeros((K, 2))
        score = np.zeros(K)
        for k in range(K):
            m = hm[b, k]
            flat = int(np.argmax(m))          # first occurrence wins ties
            cy, cx = divmod(flat, ww)
            score[k] = m[cy, cx]
            fx, fy = float(cx), float(cy)
            if 0 < cx < ww - 1:
                fx += 0.25 * np.sign(m[cy, cx + 1] - m[cy, cx - 1])
            if 0 < cy < hh - 1:
                fy += 0.25 * np.sign(m[cy + 1, cx] - m[cy - 1, cx])
            xy[k] = (fx * stride, fy * stride)
        out.append(Keypoints(xy=xy, visible=np.ones(K, dtype=bool), score=score))
    return out


def pck(pred: Sequence[Keypoints], gt: Sequence[Keypoints], tau: float, extent) -> float:
    """Fraction of visible keypoints localized within tau * image diagonal."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    H, W = extent
    thresh = tau * float(np.hypot(H, W))
    hits = total = 0
    for pr, g in zip(pred, gt):
        vis = g.visible
        err = np.linalg.norm(pr.xy - g.xy, axis=1)
        hits += int((err[vis] <= thresh).sum())
        total += int(vis.sum())
    return hits / total if total else 0.0


def write_predictions_csv(path, pred: Sequence[Keypoints], sample_ids=None) -> None:
    """Dump decoded keypoints as `sample_id,k,x,y,score` rows."""
    ids = sample_ids if sample_ids is not None else range(len(pred))
    with open(path, "w") as fh:
        fh.write("sample_id,k,x,y,score\n")
        for sid, kp in zip(ids, pred):
            for k in range(kp.count):
                s = 0.0 if kp.score is None else kp.score[k]
                fh.write(f"{sid},{k},{kp.xy[k, 0]:.4f},{kp.xy[k, 1]:.4f},{s:.6f}\n")


# ---------------------------------------------------------------------------
# full model

@dataclass
class PoseModel:
    """One stem variant plus the shared encoder and heatmap head."""
    cfg: PoseModelConfig
    stem_cfg: StemConfig
    params: Params

    @property
    def grid(self) -> tuple:
        return token_grid(*self.cfg.input_extent)

    @property
    def param_count(self) -> int:
        return self.params.count()

    def forward(self, x: Tensor, p: Mapping[str, Tensor] = None) -> Tensor:
        pm = p if p is not None else self.params.values()
        tokens = stem_forward(x, pm, "stem", self.stem_cfg)
        feat = encode(tokens, pm, "encoder", self.cfg.depth, self.cfg.heads)
        return heatmap_head(feat, self.grid, pm, "head")


def build_pose_model(variant: StemVariant, cfg: PoseModelConfig = None,
                     stem_cfg: StemConfig = None, seed: int = 0,
                     dtype=np.float32) -> PoseModel:
    cfg = cfg or PoseModelConfig()
    cfg.validate()
    if stem_cfg is None:
        stem_cfg = StemConfig(variant=variant, embed_dim=cfg.embed_dim)
    else:
        stem_cfg.variant = variant
        stem_cfg.embed_dim = cfg.embed_dim
    rng = np.random.default_rng(seed)
    params = Params()
    init_stem(params, "stem", rng, stem_cfg, cfg.input_extent, dtype)
    init_encoder(params, "encoder", rng, cfg, dtype)
    init_heatmap_head(params, "head", rng, cfg, dtype)
    return PoseModel(cfg=cfg, stem_cfg=stem_cfg, params=params)
