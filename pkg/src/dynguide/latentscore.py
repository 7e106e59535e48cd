"""Score fields in data space and latent space.

Two pieces live here. The first compares true / learned / guided score
fields along a 1-D slice of the data space, which is where score sharpening
between modes is visible. The second pulls scores back through a
differentiable decoder: a clean-data score estimate (noise-and-average),
the chain-rule pullback J^T s, and the Jacobian log-determinant correction
for the latent density, computed exactly with nested automatic
differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import class_grad
from .datasets.gmm import GmmSpec
from .diffusion import Schedule, denoiser_score, forward_noise, gmm_score_t, score_from_eps
from .numerics.rng import Rng
from .numerics.tensor import (
    Tensor,
    exp,
    getitem,
    grad,
    logdet,
    matmul,
    mul,
    reshape,
    stack,
    transpose,
    tsum,
)
from .samplers import select_class

SERIES_ORDER = ("true", "unguided", "guided")


@dataclass
class ScoreField1D:
    """Scalar score component sampled along one axis (data dim or latent dim)."""

    axis: str
    positions: np.ndarray
    series: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        for name, vals in self.series.items():
            vals = np.asarray(vals, dtype=np.float64)
            if vals.shape != self.positions.shape:
                raise ValueError(f"series {name!r} length {vals.shape} does not "
                                 f"match grid {self.positions.shape}")
            self.series[name] = vals

    def names(self) -> list[str]:
        return [n for n in SERIES_ORDER if n in self.series]

    def header(self) -> list[str]:
        return ["position"] + self.names()

    def rows(self) -> list[list[float]]:
        cols = [self.series[n] for n in self.names()]
        return [[float(p)] + [float(c[i]) for c in cols]
                for i, p in enumerate(self.positions)]


def score_field_gmm(model, classifier, spec: GmmSpec, schedule: Schedule,
                    axis: int, grid: np.ndarray, t: int, lam: float) -> ScoreField1D:
    """True, learned, and guided score components along one data axis.

    The swept coordinate takes the grid values, the other coordinate is held
    at 0 (the central mode row/column). Scores are evaluated at noise level t
    and the returned series hold the component along `axis`.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if not np.all(np.isfinite(grid)):
        raise ValueError("grid must be finite")
    if axis not in (0, 1):
        raise ValueError(f"axis must be 0 or 1, got {axis}")
    pts = np.zeros((len(grid), 2))
    pts[:, axis] = grid
    true_s = gmm_score_t(spec, pts, t, schedule)[:, axis]
    learned = denoiser_score(model, pts, t, schedule)[:, axis]
    if lam == 0.0 or classifier is None:
        guided = learned.copy()
    else:
        y_star = select_class(classifier, pts, t)
        guided = learned + lam * class_grad(classifier, pts, t, y_star)[:, axis]
    return ScoreField1D(axis=f"x[{axis}]", positions=grid,
                        series={"true": true_s, "unguided": learned,
                                "guided": guided})


def _pairwise_sum(values: np.ndarray) -> np.ndarray:
    """Tree-order sum along axis 0; reduction order is fixed regardless of
    how the work might be chunked, so results are bit-reproducible."""
    values = np.asarray(values)
    n = len(values)
    if n == 0:
        raise ValueError("cannot reduce an empty set of draws")
    while n > 1:
        half = n // 2
        values = np.concatenate(
            [values[:half] + values[half : 2 * half], values[2 * half : n]], axis=0)
        n = half + (n - 2 * half)
    return values[0]


def perturb_and_average_score(model, x0: np.ndarray, t: int, n_noise: int,
                              schedule: Schedule, rng: Rng) -> np.ndarray:
    """Estimate the clean-data score at x0 by noising it n_noise times to
    level t and averaging the implied noisy scores."""
    if n_noise < 1:
        raise ValueError(f"n_noise must be >= 1, got {n_noise}")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.normal((n_noise,) + x0.shape)
    x_t = forward_noise(np.broadcast_to(x0, eps.shape), t, eps, schedule)
    eps_hat = model(Tensor(x_t), np.full(n_noise, t, dtype=np.int64)).data
    scores = score_from_eps(eps_hat, t, schedule)
    return _pairwise_sum(scores) / n_noise


def _decode_flat(decoder, z: Tensor) -> Tensor:
    """decoder consumes (1, m) and the flattened output is (d,)."""
    return reshape(decoder(z), (-1,))


def pullback_score(decoder, z: np.ndarray, score_x: np.ndarray) -> np.ndarray:
    """J_D(z)^T score_x via one vector-Jacobian product."""
    zt = Tensor(np.asarray(z, dtype=np.float64)[None, :], requires_grad=True)
    out = _decode_flat(decoder, zt)
    inner = tsum(out * Tensor(np.asarray(score_x, dtype=np.float64).ravel()))
    return grad(inner, [zt])[0].data[0]


def decoder_logdet_grad(decoder, z: np.ndarray) -> np.ndarray:
    """Gradient of log sqrt(det(J^T J)) at z, exact via nested AD.

    Costs one graph-building backward pass per output dimension, so it is
    cheap for analytic decoders and a few seconds for 32x32 image decoders.
    """
    z = np.asarray(z, dtype=np.float64)
    zt = Tensor(z[None, :], requires_grad=True)
    out = _decode_flat(decoder, zt)
    rows = [reshape(grad(getitem(out, i), [zt], create_graph=True)[0], (-1,))
            for i in range(out.shape[0])]
    jac = stack(rows, axis=0)  # (d, m)
    gram = matmul(transpose(jac), jac)
    try:
        half_logdet = mul(0.5, logdet(gram))
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f"condition failure: J^T J is singular or not positive-definite "
            f"at z={z.tolist()}") from exc
    return grad(half_logdet, [zt])[0].data[0]


def latent_score(decoder, model, z: np.ndarray, t: int, n_noise: int,
                 schedule: Schedule, rng: Rng) -> np.ndarray:
    """Estimate of the latent log-density gradient at z: the data-score
    estimate at D(z) pulled back through the Jacobian, plus the
    log-determinant term."""
    z = np.asarray(z, dtype=np.float64)
    x0 = decoder(Tensor(z[None, :])).data[0]
    s_x = perturb_and_average_score(model, x0, t, n_noise, schedule, rng)
    return pullback_score(decoder, z, s_x) + decoder_logdet_grad(decoder, z)


def latent_traversal_field(decoder, model, classifier, z0: np.ndarray, dim: int,
                           grid: np.ndarray, t: int, lam: float, n_noise: int,
                           schedule: Schedule, rng: Rng) -> ScoreField1D:
    """Latent-score component along one latent dimension, unguided and with
    the class-guidance gradient pulled back through the decoder."""
    z0 = np.asarray(z0, dtype=np.float64)
    if not 0 <= dim < len(z0):
        raise ValueError(f"dim {dim} out of range for latent size {len(z0)}")
    grid = np.asarray(grid, dtype=np.float64)
    unguided = np.empty(len(grid))
    guided = np.empty(len(grid))
    for i, v in enumerate(grid):
        z = z0.copy()
        z[dim] = v
        sub = rng.derive(rng.domain, (rng.index << 16) + i)
        s_lat = latent_score(decoder, model, z, t, n_noise, schedule, sub)
        unguided[i] = s_lat[dim]
        if lam == 0.0 or classifier is None:
            guided[i] = s_lat[dim]
            continue
        x0 = decoder(Tensor(z[None, :])).data
        y = select_class(classifier, x0, t)
        g = class_grad(classifier, x0, t, y)[0]
        guided[i] = (s_lat + lam * pullback_score(decoder, z, g))[dim]
    return ScoreField1D(axis=f"z[{dim}]", positions=grid,
                        series={"unguided": unguided, "guided": guided})


def vae_losses(encoder, decoder, x: Tensor, eps: np.ndarray) -> tuple[Tensor, Tensor]:
    """Per-batch mean reconstruction SSE and mean KL to the unit Gaussian."""
    mu, logvar = encoder(x)
    std = exp(mul(0.5, logvar))
    z = mu + std * Tensor(eps)
    recon = decoder(z)
    n = x.shape[0]
    rec = tsum((recon - x) * (recon - x)) * Tensor(1.0 / n)
    kl = tsum(mul(-0.5, Tensor(1.0) + logvar - mu * mu - exp(logvar))) * Tensor(1.0 / n)
    return rec, kl


def train_vae(images: np.ndarray, steps: int, rng: Rng, latent: int = 10,
              beta: float = 4.0, batch_size: int = 64, lr: float = 1e-3,
              base: int = 16):
    """Small conv autoencoder on [0,1] images; returns (encoder, decoder, curve).

    beta scales the KL term. This is a demonstration-quality model for latent
    traversals, not a full generative benchmark.
    """
    from .models import ShapesDecoder, ShapesEncoder
    from .numerics.optim import Adam

    images = np.asarray(images, dtype=np.float64)
    enc = ShapesEncoder(rng.derive(rng.domain, rng.index * 2 + 1), latent=latent, base=base)
    dec = ShapesDecoder(rng.derive(rng.domain, rng.index * 2 + 2), latent=latent, base=base)
    params = enc.named_parameters("enc.") + dec.named_parameters("dec.")
    opt = Adam(params, lr=lr)
    stream = rng.derive(rng.domain, (rng.index << 8) + 7)
    curve = []
    for step in range(1, steps + 1):
        idx = stream.integers(0, len(images), (batch_size,))
        eps = stream.normal((batch_size, latent))
        x = Tensor(images[idx])
        rec, kl = vae_losses(enc, dec, x, eps)
        loss = rec + Tensor(beta) * kl
        grads = grad(loss, [p for _, p in params])
        opt.step(grads)
        curve.append((step, float(loss.data)))
    return enc, dec, curve


__all__ = [
    "ScoreField1D",
    "score_field_gmm",
    "perturb_and_average_score",
    "pullback_score",
    "decoder_logdet_grad",
    "latent_score",
    "latent_traversal_field",
    "vae_losses",
    "train_vae",
]
