"""Model architectures: MLP denoiser/classifier for 2D points, a compact
residual UNet and conv classifier for 32x32 shapes, and a small autoencoder
whose decoder feeds the latent-score analysis.

All parameters are float64; sizes are chosen for single-core CPU throughput.
"""

from __future__ import annotations

import numpy as np

from .numerics import nn
from .numerics.rng import Rng
from .numerics.tensor import (
    Tensor,
    concat,
    matmul,
    reshape,
    sigmoid,
    silu,
    tmean,
    transpose,
    upsample2,
)

TIME_EMBED_DIM = 64


def space_to_depth(x: Tensor) -> Tensor:
    """(B,C,H,W) -> (B,4C,H/2,W/2), packing each 2x2 block into channels."""
    b, c, h, w = x.shape
    x = reshape(x, (b, c, h // 2, 2, w // 2, 2))
    x = transpose(x, (0, 1, 3, 5, 2, 4))
    return reshape(x, (b, c * 4, h // 2, w // 2))


def depth_to_space(x: Tensor) -> Tensor:
    """(B,4C,H,W) -> (B,C,2H,2W), the inverse of space_to_depth."""
    b, c4, h, w = x.shape
    c = c4 // 4
    x = reshape(x, (b, c, 2, 2, h, w))
    x = transpose(x, (0, 1, 4, 2, 5, 3))
    return reshape(x, (b, c, h * 2, w * 2))


def _temb(t, n: int) -> Tensor:
    t = np.broadcast_to(np.asarray(t), (n,))
    return nn.timestep_embedding(t, TIME_EMBED_DIM)


class TimedMlp(nn.Module):
    """Shared trunk for 2D-point models: concat(x, time features) -> MLP."""

    def __init__(self, rng: Rng, in_dim: int, hidden: int, depth: int, out_dim: int):
        super().__init__()
        dims = [in_dim + TIME_EMBED_DIM] + [hidden] * depth
        self.layers = [nn.Linear(rng.derive(rng.domain, 100 + i), dims[i], dims[i + 1]) for i in range(depth)]
        self.head = nn.Linear(rng.derive(rng.domain, 199), hidden, out_dim)

    def forward(self, x: Tensor, t) -> Tensor:
        h = concat([x, _temb(t, x.shape[0])], axis=1)
        for layer in self.layers:
            h = silu(layer(h))
        return self.head(h)


class GmmDenoiser(TimedMlp):
    sample_shape = (2,)

    def __init__(self, rng: Rng, hidden: int = 128, depth: int = 3):
        super().__init__(rng, 2, hidden, depth, 2)


class GmmClassifier(TimedMlp):
    def __init__(self, rng: Rng, k: int = 25, hidden: int = 64, depth: int = 3):
        super().__init__(rng, 2, hidden, depth, k)
        self.k = k


class ResBlock(nn.Module):
    """norm -> silu -> conv -> +time -> norm -> silu -> conv(zero) + skip."""

    def __init__(self, rng: Rng, cin: int, cout: int, idx: int):
        super().__init__()
        r = rng.derive(rng.domain, 300 + idx * 10)
        self.norm1 = nn.GroupNorm(cin, groups=min(8, cin))
        self.conv1 = nn.Conv2d(r.derive(r.domain, r.index + 1), cin, cout)
        self.temb_proj = nn.Linear(r.derive(r.domain, r.index + 2), TIME_EMBED_DIM, cout)
        self.norm2 = nn.GroupNorm(cout, groups=min(8, cout))
        self.conv2 = nn.Conv2d(r.derive(r.domain, r.index + 3), cout, cout, zero_init=True)
        self.skip = None if cin == cout else nn.Conv2d(r.derive(r.domain, r.index + 4), cin, cout, ksize=1, pad=0)

    def forward(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        bias = self.temb_proj(temb)
        h = h + reshape(bias, (bias.shape[0], bias.shape[1], 1, 1))
        h = self.conv2(silu(self.norm2(h)))
        s = x if self.skip is None else self.skip(x)
        return h + s


class ShapesUNet(nn.Module):
    """Residual UNet over (B,1,32,32). The image is packed losslessly to
    (B,4,16,16) first so every convolution runs at 16x16 or below, which is
    what keeps the patch-matrix workspaces small on one CPU core."""

    sample_shape = (1, 32, 32)

    def __init__(self, rng: Rng, base: int = 32):
        super().__init__()
        c1, c2, c3 = base, base * 2, base * 4
        r = rng
        self.stem = nn.Conv2d(r.derive(r.domain, 1), 4, c1)  # at 16x16
        self.down1 = ResBlock(r, c1, c1, 1)
        self.to8 = nn.Conv2d(r.derive(r.domain, 2), c1, c2, stride=2)  # 16 -> 8
        self.down2 = ResBlock(r, c2, c2, 2)
        self.to4 = nn.Conv2d(r.derive(r.domain, 3), c2, c3, stride=2)  # 8 -> 4
        self.mid1 = ResBlock(r, c3, c3, 3)
        self.mid2 = ResBlock(r, c3, c3, 4)
        self.up8 = nn.Conv2d(r.derive(r.domain, 5), c3, c2)  # after 4 -> 8
        self.dec2 = ResBlock(r, c2 * 2, c2, 6)
        self.up16 = nn.Conv2d(r.derive(r.domain, 7), c2, c1)  # after 8 -> 16
        self.dec1 = ResBlock(r, c1 * 2, c1, 8)
        self.out_norm = nn.GroupNorm(c1, groups=8)
        self.out_conv = nn.Conv2d(r.derive(r.domain, 10), c1, 4, zero_init=True)

    def forward(self, x: Tensor, t) -> Tensor:
        temb = _temb(t, x.shape[0])
        h1 = self.down1(self.stem(space_to_depth(x)), temb)  # (B,c1,16,16)
        h2 = self.down2(self.to8(h1), temb)  # (B,c2,8,8)
        h = self.mid2(self.mid1(self.to4(h2), temb), temb)  # (B,c3,4,4)
        h = self.up8(upsample2(h))  # (B,c2,8,8)
        h = self.dec2(concat([h, h2], axis=1), temb)
        h = self.up16(upsample2(h))  # (B,c1,16,16)
        h = self.dec1(concat([h, h1], axis=1), temb)
        return depth_to_space(self.out_conv(silu(self.out_norm(h))))


class ShapesClassifier(nn.Module):
    """Half-width conv trunk ending in global average pooling."""

    def __init__(self, rng: Rng, k: int, base: int = 16):
        super().__init__()
        c1, c2, c3 = base, base * 2, base * 4
        r = rng
        self.k = k
        self.stem = nn.Conv2d(r.derive(r.domain, 21), 4, c1)  # on packed 16x16 input
        self.b1 = ResBlock(r, c1, c1, 22)
        self.to8 = nn.Conv2d(r.derive(r.domain, 23), c1, c2, stride=2)
        self.b2 = ResBlock(r, c2, c2, 24)
        self.to4 = nn.Conv2d(r.derive(r.domain, 25), c2, c3, stride=2)
        self.b3 = ResBlock(r, c3, c3, 26)
        self.head = nn.Linear(r.derive(r.domain, 27), c3, k)

    def forward(self, x: Tensor, t) -> Tensor:
        temb = _temb(t, x.shape[0])
        h = self.b1(self.stem(space_to_depth(x)), temb)
        h = self.b2(self.to8(h), temb)
        h = self.b3(self.to4(h), temb)
        h = tmean(h, axis=(2, 3))
        return self.head(h)


class ShapesEncoder(nn.Module):
    def __init__(self, rng: Rng, latent: int = 10, base: int = 16):
        super().__init__()
        r = rng
        self.conv1 = nn.Conv2d(r.derive(r.domain, 41), 1, base, stride=2)  # 16
        self.conv2 = nn.Conv2d(r.derive(r.domain, 42), base, base * 2, stride=2)  # 8
        self.conv3 = nn.Conv2d(r.derive(r.domain, 43), base * 2, base * 2, stride=2)  # 4
        self.fc_mu = nn.Linear(r.derive(r.domain, 44), base * 2 * 16, latent)
        self.fc_logvar = nn.Linear(r.derive(r.domain, 45), base * 2 * 16, latent)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = silu(self.conv1(x))
        h = silu(self.conv2(h))
        h = silu(self.conv3(h))
        h = reshape(h, (h.shape[0], h.shape[1] * 16))
        return self.fc_mu(h), self.fc_logvar(h)


class ShapesDecoder(nn.Module):
    """Latent (B,m) -> image (B,1,32,32) in [0,1]; differentiable end to end."""

    def __init__(self, rng: Rng, latent: int = 10, base: int = 16):
        super().__init__()
        r = rng
        self.latent = latent
        self.fc = nn.Linear(r.derive(r.domain, 51), latent, base * 2 * 16)
        self.conv1 = nn.Conv2d(r.derive(r.domain, 52), base * 2, base * 2)  # 4 -> up 8
        self.conv2 = nn.Conv2d(r.derive(r.domain, 53), base * 2, base)  # 8 -> up 16
        self.conv3 = nn.Conv2d(r.derive(r.domain, 54), base, base // 2)  # 16 -> up 32
        self.out = nn.Conv2d(r.derive(r.domain, 55), base // 2, 1)
        self.base = base

    def forward(self, z: Tensor) -> Tensor:
        h = silu(self.fc(z))
        h = reshape(h, (z.shape[0], self.base * 2, 4, 4))
        h = silu(self.conv1(upsample2(h)))
        h = silu(self.conv2(upsample2(h)))
        h = silu(self.conv3(upsample2(h)))
        return sigmoid(self.out(h))


class LinearDecoder(nn.Module):
    """Analytic test decoder D(z) = A z + b over flat data."""

    def __init__(self, a: np.ndarray, b: np.ndarray | None = None):
        super().__init__()
        a = np.asarray(a, dtype=np.float64)
        self.a = Tensor(a)
        self.b = Tensor(np.zeros(a.shape[0]) if b is None else b)
        self.latent = a.shape[1]

    def forward(self, z: Tensor) -> Tensor:
        return matmul(z, Tensor(self.a.data.T)) + self.b


MODEL_BUILDERS = {
    "gmm_denoiser": lambda rng, **kw: GmmDenoiser(rng, **kw),
    "gmm_classifier": lambda rng, **kw: GmmClassifier(rng, **kw),
    "shapes_unet": lambda rng, **kw: ShapesUNet(rng, **kw),
    "shapes_classifier": lambda rng, **kw: ShapesClassifier(rng, **kw),
}
