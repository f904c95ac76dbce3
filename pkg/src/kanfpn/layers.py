"""Parameter registry, initialization, and the shared layer zoo.

Models are plain functions over a flat, dotted-name parameter mapping.
``Params`` owns the persistent values; a training step watches them on a
tape and passes the tracked mapping into the forward functions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from . import tensor as T
from .errors import CheckpointMismatch, InvalidSpec, ShapeMismatch
from .imageops import conv2d, conv_transpose2d, norm2d
from .tensor import Tensor, dump_tensor, load_tensor

__all__ = [
    "Param", "Params", "LayerSpec", "init_params",
    "linear", "conv_block", "layer_norm", "mhsa", "transformer_block", "deconv_block",
    "init_linear", "init_conv", "init_conv_block", "init_norm", "init_mhsa",
    "init_transformer_block", "init_deconv_block",
    "save_checkpoint", "load_checkpoint",
]


@dataclass
class Param:
    name: str
    value: Tensor
    trainable: bool = True


class Params:
    """Insertion-ordered collection of uniquely named parameters."""

    def __init__(self):
        self._items: dict[str, Param] = {}

    def add(self, name: str, value: Tensor, trainable: bool = True) -> None:
        if name in self._items:
            raise InvalidSpec(f"duplicate parameter name {name!r}")
        self._items[name] = Param(name, value, trainable)

    def __getitem__(self, name: str) -> Param:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[Param]:
        return iter(self._items.values())

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def count(self) -> int:
        """Total trainable scalar count."""
        return sum(p.value.size for p in self if p.trainable)

    def values(self) -> dict[str, Tensor]:
        """Plain name -> value mapping for an untracked forward pass."""
        return {n: p.value for n, p in self._items.items()}

    def tracked(self, tape: T.Tape) -> dict[str, Tensor]:
        """Watch every trainable parameter on ``tape``; other values pass through."""
        return {n: (tape.watch(p.value) if p.trainable else p.value)
                for n, p in self._items.items()}

    def astype(self, dtype) -> "Params":
        out = Params()
        for p in self:
            out.add(p.name, Tensor(p.value.data.astype(dtype)), p.trainable)
        return out

    def set_value(self, name: str, data) -> None:
        p = self._items[name]
        arr = np.asarray(data, dtype=p.value.dtype)
        if arr.shape != p.value.shape:
            raise ShapeMismatch(f"{name}: cannot assign shape {arr.shape} over {p.value.shape}")
        p.value = Tensor(arr)


# ---------------------------------------------------------------------------
# initialization

def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = float(np.sqrt(6.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def _ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def _n(prefix: str, leaf: str) -> str:
    return f"{prefix}.{leaf}" if prefix else leaf


def init_conv(params: Params, name: str, rng, out_ch, in_ch_per_group, kh, kw, dtype=np.float32):
    params.add(name, _uniform(rng, (out_ch, in_ch_per_group, kh, kw), in_ch_per_group * kh * kw, dtype))


def init_norm(params: Params, prefix: str, channels: int, dtype=np.float32):
    params.add(_n(prefix, "gamma"), _ones((channels,), dtype))
    params.add(_n(prefix, "beta"), _zeros((channels,), dtype))


def init_linear(params: Params, prefix: str, rng, d_in: int, d_out: int, dtype=np.float32):
    params.add(_n(prefix, "w"), _uniform(rng, (d_in, d_out), d_in, dtype))
    params.add(_n(prefix, "b"), _zeros((d_out,), dtype))


def init_conv_block(params: Params, prefix: str, rng, in_ch, out_ch, k=3, dtype=np.float32):
    init_conv(params, _n(prefix, "w"), rng, out_ch, in_ch, k, k, dtype)
    init_norm(params, prefix, out_ch, dtype)


def init_mhsa(params: Params, prefix: str, rng, dim: int, heads: int, dtype=np.float32):
    if dim % heads:
        raise InvalidSpec(f"embed dim {dim} not divisible by heads {heads}")
    for leaf in ("wq", "wk", "wv", "wo"):
        params.add(_n(prefix, leaf), _uniform(rng, (dim, dim), dim, dtype))
    for leaf in ("bq", "bk", "bv", "bo"):
        params.add(_n(prefix, leaf), _zeros((dim,), dtype))


def init_transformer_block(params: Params, prefix: str, rng, dim: int, heads: int,
                           mlp_ratio: int = 4, dtype=np.float32):
    init_norm(params, _n(prefix, "ln1"), dim, dtype)
    init_mhsa(params, _n(prefix, "attn"), rng, dim, heads, dtype)
    init_norm(params, _n(prefix, "ln2"), dim, dtype)
    hidden = dim * mlp_ratio
    init_linear(params, _n(prefix, "mlp.fc1"), rng, dim, hidden, dtype)
    init_linear(params, _n(prefix, "mlp.fc2"), rng, hidden, dim, dtype)


def init_deconv_block(params: Params, prefix: str, rng, in_ch, out_ch, k=4, dtype=np.float32):
    # transposed-conv weight is [in, out, k, k]
    params.add(_n(prefix, "w"), _uniform(rng, (in_ch, out_ch, k, k), in_ch * k * k, dtype))
    init_norm(params, prefix, out_ch, dtype)


@dataclass
class LayerSpec:
    """Geometry of one layer kind, enough to build or count its parameters."""
    kind: str                      # conv_block | linear | mhsa | transformer_block | deconv_block
    in_dim: int
    out_dim: int = 0
    kernel: int = 3
    heads: int = 1
    mlp_ratio: int = 4

    def validate(self) -> None:
        if self.kind not in ("conv_block", "linear", "mhsa", "transformer_block", "deconv_block"):
            raise InvalidSpec(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1:
            raise InvalidSpec("in_dim must be positive")
        if self.kind in ("conv_block", "linear", "deconv_block") and self.out_dim < 1:
            raise InvalidSpec(f"{self.kind} requires out_dim")
        if self.kind in ("mhsa", "transformer_block") and self.in_dim % self.heads:
            raise InvalidSpec(f"embed dim {self.in_dim} not divisible by heads {self.heads}")

    def param_count(self) -> int:
        self.validate()
        d, o, k = self.in_dim, self.out_dim, self.kernel
        if self.kind == "conv_block":
            return o * d * k * k + 2 * o
        if self.kind == "deconv_block":
            return d * o * k * k + 2 * o
        if self.kind == "linear":
            return d * o + o
        if self.kind == "mhsa":
            return 4 * d * d + 4 * d
        hidden = d * self.mlp_ratio
        return (4 * d * d + 4 * d) + 2 * (2 * d) + (d * hidden + hidden) + (hidden * d + d)


def init_params(spec: LayerSpec, rng_seed: int, dtype=np.float32) -> Params:
    """Build a fresh parameter set for one layer; deterministic in the seed."""
    spec.validate()
    rng = np.random.default_rng(rng_seed)
    params = Params()
    if spec.kind == "conv_block":
        init_conv_block(params, "", rng, spec.in_dim, spec.out_dim, spec.kernel, dtype)
    elif spec.kind == "linear":
        init_linear(params, "", rng, spec.in_dim, spec.out_dim, dtype)
    elif spec.kind == "mhsa":
        init_mhsa(params, "", rng, spec.in_dim, spec.heads, dtype)
    elif spec.kind == "transformer_block":
        init_transformer_block(params, "", rng, spec.in_dim, spec.heads, spec.mlp_ratio, dtype)
    else:
        init_deconv_block(params, "", rng, spec.in_dim, spec.out_dim, spec.kernel, dtype)
    return params


# ---------------------------------------------------------------------------
# forward functions

def linear(x: Tensor, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    return T.add(T.matmul(x, p[_n(prefix, "w")]), p[_n(prefix, "b")])


def conv_block(x: Tensor, p: Mapping[str, Tensor], prefix: str, stride: int = 1,
               padding: int = None, eps: float = 1e-5) -> Tensor:
    w = p[_n(prefix, "w")]
    if padding is None:
        padding = w.shape[-1] // 2
    y = conv2d(x, w, stride=stride, padding=padding)
    y = norm2d(y, p[_n(prefix, "gamma")], p[_n(prefix, "beta")], eps)
    return T.relu(y)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing feature axis of [B, T, D] tokens."""
    mu = T.reduce_mean(x, axis=-1, keepdims=True)
    d = T.sub(x, mu)
    var = T.reduce_mean(T.mul(d, d), axis=-1, keepdims=True)
    denom = T.sqrt(T.add(var, Tensor(np.asarray([eps], dtype=x.dtype))))
    return T.add(T.mul(T.div(d, denom), gamma), beta)


def mhsa(x: Tensor, p: Mapping[str, Tensor], prefix: str, heads: int) -> Tensor:
    """Multi-head scaled dot-product self-attention with output projection."""
    B, t, D = x.shape
    if D % heads:
        raise InvalidSpec(f"embed dim {D} not divisible by heads {heads}")
    dh = D // heads

    def split(leaf_w, leaf_b):
        y = T.add(T.matmul(x, p[_n(prefix, leaf_w)]), p[_n(prefix, leaf_b)])
        return T.transpose(T.reshape(y, (B, t, heads, dh)), (0, 2, 1, 3))

    q = split("wq", "bq")
    k = split("wk", "bk")
    v = split("wv", "bv")
    logits = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / float(np.sqrt(dh)))
    att = T.softmax(logits, axis=-1)
    y = T.matmul(att, v)
    y = T.reshape(T.transpose(y, (0, 2, 1, 3)), (B, t, D))
    return T.add(T.matmul(y, p[_n(prefix, "wo")]), p[_n(prefix, "bo")])


def transformer_block(x: Tensor, p: Mapping[str, Tensor], prefix: str, heads: int) -> Tensor:
    """Pre-norm block: attention then SiLU MLP, each on a residual path."""
    h = layer_norm(x, p[_n(prefix, "ln1.gamma")], p[_n(prefix, "ln1.beta")])
    x = T.add(x, mhsa(h, p, _n(prefix, "attn"), heads))
    h = layer_norm(x, p[_n(prefix, "ln2.gamma")], p[_n(prefix, "ln2.beta")])
    h = linear(T.silu(linear(h, p, _n(prefix, "mlp.fc1"))), p, _n(prefix, "mlp.fc2"))
    return T.add(x, h)


def deconv_block(x: Tensor, p: Mapping[str, Tensor], prefix: str, stride: int = 2,
                 padding: int = 1, eps: float = 1e-5) -> Tensor:
    y = conv_transpose2d(x, p[_n(prefix, "w")], stride=stride, padding=padding)
    y = norm2d(y, p[_n(prefix, "gamma")], p[_n(prefix, "beta")], eps)
    return T.relu(y)


# ---------------------------------------------------------------------------
# checkpoint format: "CKPT", u16 version, then (u16 name length, name, tensor blob)*

_CKPT_MAGIC = b"CKPT"
_CKPT_VERSION = 1


def save_checkpoint(params: Params, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<H", _CKPT_VERSION))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            dump_tensor(p.value, fh)


def read_checkpoint(path) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise CheckpointMismatch(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _CKPT_VERSION:
            raise CheckpointMismatch(f"unsupported checkpoint version {version}")
        while True:
            head = fh.read(2)
            if not head:
                break
            (nlen,) = struct.unpack("<H", head)
            name = fh.read(nlen).decode("utf-8")
            out[name] = load_tensor(fh)
    return out


def load_checkpoint(params: Params, path) -> None:
    """Restore values in place; the name sets and shapes must match exactly."""
    state = read_checkpoint(path)
    have, want = set(state), set(params.names())
    if have != want:
        missing = sorted(want - have)[:4]
        extra = sorted(have - want)[:4]
        raise CheckpointMismatch(
            f"parameter names differ (missing {missing}, unexpected {extra})")
    for name, value in state.items():
        if value.shape != params[name].value.shape:
            raise CheckpointMismatch(
                f"{name}: checkpoint shape {tuple(value.shape)} != model {tuple(params[name].value.shape)}")
        params.set_value(name, value.data)
