"""Spatial ops on [B, C, H, W] tensors: convolution, pooling, upsampling, norm.

Convolutions use cross-correlation semantics (no kernel flip). Forward paths
are im2col + matmul; backward scatters through the same window geometry.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInput, InvalidGeometry, ShapeMismatch
from .tensor import Tensor, _emit, add, div, mul, reduce_max, reduce_mean, reshape, sqrt, sub

__all__ = ["conv2d", "conv_transpose2d", "pool2d", "upsample_nearest2x", "crop2d", "norm2d"]


def _out_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _windows(xp: np.ndarray, kh: int, kw: int, s: int) -> np.ndarray:
    """Read-only view [B, C, kh, kw, Ho, Wo] over a padded input."""
    B, C, Hp, Wp = xp.shape
    Ho = (Hp - kh) // s + 1
    Wo = (Wp - kw) // s + 1
    sB, sC, sH, sW = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (B, C, kh, kw, Ho, Wo), (sB, sC, sH, sW, sH * s, sW * s), writeable=False)


def _scatter_windows(cols: np.ndarray, Hp: int, Wp: int, s: int) -> np.ndarray:
    """Accumulate window gradients [B, C, kh, kw, Ho, Wo] back onto the padded grid."""
    B, C, kh, kw, Ho, Wo = cols.shape
    out = np.zeros((B, C, Hp, Wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, w: Tensor, bias: Tensor = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-d cross-correlation with optional bias."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-d input/weight, got {tuple(x.shape)}, {tuple(w.shape)}")
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    if C % groups or O % groups:
        raise ShapeMismatch(f"channels ({C} in, {O} out) not divisible by groups={groups}")
    if Cg != C // groups:
        raise ShapeMismatch(f"weight expects {Cg} channels/group, input provides {C // groups}")
    if bias is not None and tuple(bias.shape) != (O,):
        raise ShapeMismatch(f"bias shape {tuple(bias.shape)} != ({O},)")
    Ho = _out_extent(H, kh, stride, padding)
    Wo = _out_extent(W, kw, stride, padding)
    if Ho < 1 or Wo < 1:
        raise InvalidGeometry(f"conv output {Ho}x{Wo} for input {H}x{W}, k={kh}x{kw}, s={stride}, p={padding}")

    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    L = Ho * Wo
    K = Cg * kh * kw
    cols = _windows(xp, kh, kw, stride).reshape(B, groups, K, L)
    wg = w.data.reshape(groups, O // groups, K)
    y = np.matmul(wg, cols).reshape(B, O, Ho, Wo)
    if bias is not None:
        y = y + bias.data.reshape(1, O, 1, 1)

    def dx_fn(g):
        dyg = g.reshape(B, groups, O // groups, L)
        dcols = np.matmul(wg.transpose(0, 2, 1), dyg)
        dcols = dcols.reshape(B, C, kh, kw, Ho, Wo)
        dxp = _scatter_windows(dcols, H + 2 * p, W + 2 * p, stride)
        return dxp[:, :, p:p + H, p:p + W] if p else dxp

    def dw_fn(g):
        dyg = g.reshape(B, groups, O // groups, L)
        return np.matmul(dyg, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)

    def db_fn(g):
        return g.sum(axis=(0, 2, 3))

    return _emit(y, (x, w, bias), (dx_fn, dw_fn, db_fn))


def conv_transpose2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution (gradient-of-conv semantics), weight [C_in, C_out, kh, kw]."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv_transpose2d expects 4-d input/weight, got {tuple(x.shape)}, {tuple(w.shape)}")
    B, C, Hy, Wy = x.shape
    Cin, Cout, kh, kw = w.shape
    if Cin != C:
        raise ShapeMismatch(f"input has {C} channels, weight expects {Cin}")
    p = padding
    H = (Hy - 1) * stride - 2 * p + kh
    W = (Wy - 1) * stride - 2 * p + kw
    if H < 1 or W < 1:
        raise InvalidGeometry(f"deconv output {H}x{W} for input {Hy}x{Wy}, k={kh}x{kw}, s={stride}, p={p}")

    L = Hy * Wy
    K = Cout * kh * kw
    wmat = w.data.reshape(Cin, K)
    xl = x.data.reshape(B, Cin, L)
    cols = np.matmul(wmat.T, xl).reshape(B, Cout, kh, kw, Hy, Wy)
    yp = _scatter_windows(cols, H + 2 * p, W + 2 * p, stride)
    y = yp[:, :, p:p + H, p:p + W] if p else yp

    def dx_fn(g):
        gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p))) if p else g
        gcols = _windows(gp, kh, kw, stride).reshape(B, K, L)
        return np.matmul(wmat, gcols).reshape(x.shape)

    def dw_fn(g):
        gp = np.pad(g, ((0, 0), (0, 0), (p, p), (p, p))) if p else g
        gcols = _windows(gp, kh, kw, stride).reshape(B, K, L)
        return np.matmul(xl, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)

    return _emit(y, (x, w), (dx_fn, dw_fn))


def pool2d(kind: str, x: Tensor, k: int = None, s: int = None) -> Tensor:
    """Pooling: 'max'/'avg' over k x k windows at stride s, or 'global_max'/'global_avg'."""
    if x.ndim != 4:
        raise ShapeMismatch(f"pool2d expects 4-d input, got {tuple(x.shape)}")
    if kind == "global_avg":
        return reduce_mean(x, axis=(2, 3), keepdims=True)
    if kind == "global_max":
        return reduce_max(reduce_max(x, axis=3, keepdims=True), axis=2, keepdims=True)
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pool kind {kind!r}")
    if k is None or s is None:
        raise ValueError(f"{kind} pool requires k and s")
    B, C, H, W = x.shape
    Ho = _out_extent(H, k, s, 0)
    Wo = _out_extent(W, k, s, 0)
    if Ho < 1 or Wo < 1 or k > H or k > W:
        raise InvalidGeometry(f"pool window k={k}, s={s} does not fit {H}x{W}")

    win = _windows(x.data, k, k, s)            # [B, C, k, k, Ho, Wo]
    flat = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C, Ho, Wo, k * k)

    if kind == "avg":
        y = flat.mean(axis=-1)

        def da(g):
            cols = np.broadcast_to((g / (k * k))[:, :, None, None, :, :], (B, C, k, k, Ho, Wo))
            return _scatter_windows(cols, H, W, s)

        return _emit(y, (x,), (da,))

    idx = flat.argmax(axis=-1)                 # first occurrence on ties
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def da(g):
        bb, cc, ho, wo = np.indices((B, C, Ho, Wo), sparse=False)
        hh = ho * s + idx // k
        ww = wo * s + idx % k
        out = np.zeros_like(x.data)
        np.add.at(out, (bb, cc, hh, ww), g)
        return out

    return _emit(y, (x,), (da,))


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Duplicate each pixel into a 2x2 block; backward sums the block."""
    if x.ndim != 4:
        raise ShapeMismatch(f"upsample expects 4-d input, got {tuple(x.shape)}")
    B, C, H, W = x.shape
    y = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def da(g):
        return g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5))

    return _emit(y, (x,), (da,))


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left height x width window; backward zero-pads."""
    if x.ndim != 4:
        raise ShapeMismatch(f"crop2d expects 4-d input, got {tuple(x.shape)}")
    B, C, H, W = x.shape
    if height > H or width > W or height < 1 or width < 1:
        raise InvalidGeometry(f"cannot crop {H}x{W} to {height}x{width}")
    if height == H and width == W:
        return x

    def da(g):
        out = np.zeros_like(x.data)
        out[:, :, :height, :width] = g
        return out

    return _emit(np.ascontiguousarray(x.data[:, :, :height, :width]), (x,), (da,))


def norm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (batch, channel) slice over its spatial extent, then affine."""
    if x.ndim != 4:
        raise ShapeMismatch(f"norm2d expects 4-d input, got {tuple(x.shape)}")
    B, C, H, W = x.shape
    if tuple(gamma.shape) != (C,) or tuple(beta.shape) != (C,):
        raise ShapeMismatch(f"affine params must have shape ({C},)")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if H * W == 1 and eps == 0:
        raise DegenerateInput("cannot normalize a single spatial value with eps=0")
    mu = reduce_mean(x, axis=(2, 3), keepdims=True)
    d = sub(x, mu)
    var = reduce_mean(mul(d, d), axis=(2, 3), keepdims=True)
    denom = sqrt(add(var, Tensor(np.asarray([eps], dtype=x.dtype))))
    yhat = div(d, denom)
    g4 = reshape(gamma, (1, C, 1, 1))
    b4 = reshape(beta, (1, C, 1, 1))
    return add(mul(yhat, g4), b4)
