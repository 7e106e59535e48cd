"""Layers and parameter containers on top of the tensor engine."""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import (
    Tensor,
    add,
    broadcast_to,
    concat,
    im2col,
    log_softmax,
    matmul,
    mul,
    pick,
    reshape,
    silu,
    sumpool2,
    swap_last,
    tmean,
    tsum,
    upsample2,
)


class Module:
    """Minimal parameter container with registration by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(
            isinstance(v, Module) for v in value
        ):
            for i, v in enumerate(value):
                self._children[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, p in self._params.items():
            out.append((prefix + name, p))
        for name, child in self._children.items():
            out.extend(child.named_parameters(prefix + name + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        named = dict(self.named_parameters())
        missing = sorted(set(named) - set(state))
        unexpected = sorted(set(state) - set(named))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in named.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(rng: Rng, shape, scale: float) -> Tensor:
    return Tensor(rng.normal(shape) * scale, requires_grad=True)


class Linear(Module):
    def __init__(self, rng: Rng, in_features: int, out_features: int, zero_init: bool = False):
        super().__init__()
        scale = 0.0 if zero_init else np.sqrt(1.0 / in_features)
        self.weight = _param(rng, (in_features, out_features), scale)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)


class Conv2d(Module):
    """3x3-style convolution over (B,C,H,W) via patch unfolding."""

    def __init__(
        self,
        rng: Rng,
        in_ch: int,
        out_ch: int,
        ksize: int = 3,
        stride: int = 1,
        pad: int | None = None,
        zero_init: bool = False,
    ):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.ksize = ksize
        self.stride = stride
        self.pad = (ksize // 2) if pad is None else pad
        fan_in = in_ch * ksize * ksize
        scale = 0.0 if zero_init else np.sqrt(1.0 / fan_in)
        self.weight = _param(rng, (out_ch, fan_in), scale)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        b, _, h, w = x.shape
        oh = (h + 2 * self.pad - self.ksize) // self.stride + 1
        ow = (w + 2 * self.pad - self.ksize) // self.stride + 1
        cols = im2col(x, self.ksize, self.ksize, self.stride, self.pad)
        out = matmul(self.weight, cols)
        out = reshape(out, (b, self.out_ch, oh, ow))
        return add(out, reshape(self.bias, (1, self.out_ch, 1, 1)))


class GroupNorm(Module):
    """Normalization over channel groups of a (B,C,H,W) tensor."""

    def __init__(self, channels: int, groups: int = 8, eps: float = 1e-5):
        super().__init__()
        if channels % groups:
            raise ValueError(f"channels {channels} not divisible by groups {groups}")
        self.groups = groups
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        g = self.groups
        xg = reshape(x, (b, g, (c // g) * h * w))
        mu = tmean(xg, axis=2, keepdims=True)
        xc = xg - mu
        var = tmean(mul(xc, xc), axis=2, keepdims=True)
        xn = xc * ((var + self.eps) ** -0.5)
        xn = reshape(xn, (b, c, h, w))
        return add(
            mul(xn, reshape(self.gamma, (1, c, 1, 1))),
            reshape(self.beta, (1, c, 1, 1)),
        )


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        mu = tmean(x, axis=-1, keepdims=True)
        xc = x - mu
        var = tmean(mul(xc, xc), axis=-1, keepdims=True)
        return add(mul(xc * ((var + self.eps) ** -0.5), self.gamma), self.beta)


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> Tensor:
    """Sinusoidal features of integer timesteps, shape (len(t), dim)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    angles = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return Tensor(emb)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy for integer labels."""
    logp = log_softmax(logits, axis=-1)
    picked = pick(logp, np.asarray(labels, dtype=np.int64))
    return mul(tmean(picked), -1.0)


__all__ = [
    "Module",
    "Linear",
    "Conv2d",
    "GroupNorm",
    "LayerNorm",
    "timestep_embedding",
    "cross_entropy",
    "silu",
    "upsample2",
    "sumpool2",
    "concat",
    "broadcast_to",
    "tsum",
]
