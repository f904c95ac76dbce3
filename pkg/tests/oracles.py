"""Independent reference implementations the fast paths are held to."""

import numpy as np


def matmul_oracle(a, b):
    """Naive triple loop."""
    M, K = a.shape
    _, N = b.shape
    out = np.zeros((M, N), dtype=np.float64)
    for i in range(M):
        for j in range(N):
            for k in range(K):
                out[i, j] += a[i, k] * b[k, j]
    return out


def conv2d_oracle(x, w, bias=None, stride=1, padding=1, groups=1):
    """Seven plain loops over batch, output channel, pixels, taps."""
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((B, O, Ho, Wo), dtype=np.float64)
    og = O // groups
    for b in range(B):
        for o in range(O):
            g = o // og
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for c in range(Cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, g * Cg + c, i * stride + u, j * stride + v] \
                                    * w[o, c, u, v]
                    out[b, o, i, j] = acc + (bias[o] if bias is not None else 0.0)
    return out


def conv2d_as_matrix(w, x_shape, stride, padding):
    """Flattened linear operator of conv2d, built column by column."""
    B, C, H, W = x_shape
    cols = []
    for k in range(C * H * W):
        e = np.zeros((1, C, H, W))
        e.reshape(-1)[k] = 1.0
        cols.append(conv2d_oracle(e, w, stride=stride, padding=padding).reshape(-1))
    return np.stack(cols, axis=1)


def legendre_oracle(s, d):
    """Closed-form Legendre polynomials, written out degree by degree."""
    if d == 0:
        return np.ones_like(s)
    if d == 1:
        return s
    if d == 2:
        return (3 * s ** 2 - 1) / 2
    if d == 3:
        return (5 * s ** 3 - 3 * s) / 2
    if d == 4:
        return (35 * s ** 4 - 30 * s ** 2 + 3) / 8
    if d == 5:
        return (63 * s ** 5 - 70 * s ** 3 + 15 * s) / 8
    raise ValueError(d)
