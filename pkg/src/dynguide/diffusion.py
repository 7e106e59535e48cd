"""Noise schedules, forward process, denoiser training, and exact mixture scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets.gmm import GmmSpec
from .numerics import grad, no_grad
from .numerics.optim import Adam
from .numerics.rng import DOMAIN_TRAIN, Rng
from .numerics.tensor import Tensor


@dataclass
class Schedule:
    """Arrays indexed by t in [0, T]; index 0 is the identity sentinel
    (beta[0] = 0, alpha_bar[0] = 1) so t=0 means "no noise"."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "Schedule":
        beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        if not np.all(np.diff(alpha_bar) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        return cls(beta, alpha, alpha_bar)

    def check_t(self, t, allow_zero: bool = False):
        t = np.asarray(t)
        lo = 0 if allow_zero else 1
        if np.any(t < lo) or np.any(t > self.T):
            raise ValueError(f"t out of range [{lo}, {self.T}]: {t}")
        return t


def _expand(values: np.ndarray, target_ndim: int) -> np.ndarray:
    """Append singleton axes so a per-sample vector broadcasts over data dims."""
    return values.reshape(values.shape + (1,) * (target_ndim - values.ndim))


def forward_noise(x0: np.ndarray, t, eps: np.ndarray, schedule: Schedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with t scalar or per-sample."""
    t = schedule.check_t(t, allow_zero=True)
    abar = schedule.alpha_bar[t]
    if abar.ndim:
        abar = _expand(abar, x0.ndim)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def score_from_eps(eps_hat: np.ndarray, t, schedule: Schedule) -> np.ndarray:
    """Score estimate s = -eps_hat / sqrt(1 - abar_t); t=0 is rejected."""
    t = schedule.check_t(t, allow_zero=False)
    abar = schedule.alpha_bar[t]
    if abar.ndim:
        abar = _expand(abar, eps_hat.ndim)
    return -eps_hat / np.sqrt(1.0 - abar)


def gmm_log_density_t(spec: GmmSpec, x: np.ndarray, t, schedule: Schedule) -> np.ndarray:
    """log p_t(x) for the forward-noised mixture, log-sum-exp stabilized."""
    t = int(schedule.check_t(t, allow_zero=True))
    abar = schedule.alpha_bar[t]
    means = np.sqrt(abar) * spec.centers
    var = abar * spec.sigma**2 + (1.0 - abar)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d2 = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    logw = np.log(spec.weights) - np.log(2.0 * np.pi * var) - d2 / (2.0 * var)
    m = logw.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(logw - m).sum(axis=1, keepdims=True))).ravel()


def gmm_score_t(spec: GmmSpec, x: np.ndarray, t, schedule: Schedule) -> np.ndarray:
    """Exact grad_x log p_t(x) for the noised mixture at integer time t."""
    t = int(schedule.check_t(t, allow_zero=True))
    abar = schedule.alpha_bar[t]
    means = np.sqrt(abar) * spec.centers
    var = abar * spec.sigma**2 + (1.0 - abar)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    diff = means[None, :, :] - pts[:, None, :]
    logits = np.log(spec.weights)[None, :] - (diff**2).sum(axis=2) / (2.0 * var)
    logits -= logits.max(axis=1, keepdims=True)
    resp = np.exp(logits)
    resp /= resp.sum(axis=1, keepdims=True)
    score = (resp[:, :, None] * diff).sum(axis=1) / var
    return score[0] if single else score


def train_denoiser(
    dataset: np.ndarray,
    schedule: Schedule,
    model,
    steps: int,
    rng: Rng,
    batch_size: int = 256,
    lr: float = 1e-3,
    on_step=None,
) -> list[tuple[int, float]]:
    """Epsilon-prediction training; returns the per-step loss curve.

    Loss is the squared error summed over data dimensions, averaged over the
    batch, so an all-zero predictor scores ~d.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    data = np.asarray(dataset, dtype=np.float64)
    named = model.named_parameters()
    params = [p for _, p in named]
    opt = Adam(named, lr=lr)
    data_rng = rng.derive(DOMAIN_TRAIN, 0)
    curve: list[tuple[int, float]] = []
    for step in range(1, steps + 1):
        idx = data_rng.integers(0, len(data), (batch_size,))
        t = data_rng.integers(1, schedule.T + 1, (batch_size,))
        eps = data_rng.normal((batch_size,) + data.shape[1:])
        x_t = forward_noise(data[idx], t, eps, schedule)
        pred = model(Tensor(x_t), t)
        diff = pred - Tensor(eps)
        loss = (diff * diff).sum() * (1.0 / batch_size)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise RuntimeError(f"training diverged: loss={loss_val} at step {step}")
        grads = grad(loss, params)
        opt.step(grads)
        curve.append((step, loss_val))
        if on_step is not None:
            on_step(step, model, loss_val)
    return curve


def denoiser_score(model, x_t: np.ndarray, t, schedule: Schedule) -> np.ndarray:
    """Learned score at integer time t via the eps parameterization."""
    x_t = np.asarray(x_t, dtype=np.float64)
    with no_grad():
        eps_hat = model(Tensor(x_t), np.broadcast_to(t, (x_t.shape[0],))).data
    return score_from_eps(eps_hat, t, schedule)


class ClosedFormGmmEps:
    """Drop-in eps "model" backed by the exact noised-mixture score.

    Inverts s = -eps/sqrt(1 - abar_t), so samplers can run the true reverse
    process with no learned components.
    """

    sample_shape = (2,)

    def __init__(self, spec: GmmSpec, schedule: Schedule):
        self.spec = spec
        self.schedule = schedule

    def __call__(self, x: Tensor, t) -> Tensor:
        t = np.asarray(t)
        ts = np.unique(t)
        if len(ts) != 1:
            raise ValueError("closed-form eps expects one shared t per batch")
        ti = int(ts[0])
        score = gmm_score_t(self.spec, np.atleast_2d(x.data), ti, self.schedule)
        return Tensor(-score * np.sqrt(1.0 - self.schedule.alpha_bar[ti]))
