"""DDPM and DDIM reverse processes with static and per-step adaptive guidance.

Guidance modes: "none"; "static" (one class per chain, fixed up front);
"dynamic" (the guiding class is re-selected every step as the classifier's
current argmax). Guidance applies only inside the configured timestep interval.

Noise is drawn from step-keyed streams derived off the run rng, so a chain's
draws depend only on (seed, step, chain row) and results are independent of
how model evaluations are chunked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .classifier import log_prob
from .diffusion import Schedule
from .numerics import no_grad
from .numerics.rng import Rng
from .numerics.tensor import Tensor, exp, grad, log_softmax, pick, tsum

_EVAL_BUDGET = 262144  # elements per forward chunk
_GRAD_BUDGET = 131072


@dataclass
class GuidanceConfig:
    mode: str = "none"  # none | static | dynamic
    scale: float = 0.0
    fixed_class: int | np.ndarray | None = None  # static mode; scalar or per chain
    interval: Optional[tuple[int, int]] = None  # (T1, T2): active while T1 >= t >= T2
    use_raw_prob_grad: bool = False  # ablation: guide with grad p instead of grad log p

    def validate(self, T: int, k: Optional[int] = None) -> None:
        if self.mode not in ("none", "static", "dynamic"):
            raise ValueError(f"unknown guidance mode: {self.mode}")
        if self.scale < 0:
            raise ValueError("guidance scale must be >= 0")
        if self.mode == "static":
            if self.fixed_class is None:
                raise ValueError("static guidance needs fixed_class")
            classes = np.asarray(self.fixed_class)
            if k is not None and (np.any(classes < 0) or np.any(classes >= k)):
                raise ValueError(f"fixed_class outside [0, {k})")
        if self.interval is not None:
            t1, t2 = self.interval
            if not (1 <= t2 and t1 <= T and t1 >= t2 - 1):
                raise ValueError(f"interval must satisfy T >= T1 >= T2 >= 1, got {self.interval}")

    def active(self, t: int) -> bool:
        if self.mode == "none" or self.scale == 0.0:
            return False
        if self.interval is None:
            return True
        t1, t2 = self.interval
        return t1 >= t >= t2


@dataclass
class RecordSpec:
    x0_hat: bool = False
    y_star: bool = False
    guidance_norm: bool = False
    vf_window_fraction: Optional[float] = 0.2  # None disables online filter scores


@dataclass
class TrajectoryBatch:
    """Per-run trajectory record; heavy fields are opt-in via RecordSpec."""

    ts: np.ndarray  # (m,) timestep each of the m steps was evaluated at
    x0: np.ndarray  # (n, ...) final samples
    ids: np.ndarray  # (n,)
    y_star: Optional[np.ndarray] = None  # (n, m) int16
    guidance_norm: Optional[np.ndarray] = None  # (n, m) float32, lambda * ||grad||
    x0_hat: Optional[np.ndarray] = None  # (n, m, ...) float32
    vf_scores: Optional[np.ndarray] = None  # (n,) trailing-window variance
    vf_window_steps: Optional[int] = None
    meta: dict = field(default_factory=dict)


def select_class(classifier, x_t: np.ndarray, t) -> np.ndarray:
    """Per-sample argmax_y log p(y | x_t); np.argmax takes the lowest tied index."""
    logp = log_prob(classifier, x_t, t)
    return np.argmax(np.atleast_2d(logp), axis=1)


def _chunk(budget: int, item_size: int) -> int:
    return max(1, budget // max(1, item_size))


def _model_eps(model, x: np.ndarray, t: int) -> np.ndarray:
    out = np.empty_like(x)
    step = _chunk(_EVAL_BUDGET, x[0].size if len(x) else 1)
    with no_grad():
        for s in range(0, len(x), step):
            xb = x[s : s + step]
            out[s : s + step] = model(Tensor(xb), np.full(len(xb), t)).data
    return out


def _class_objective_grad(classifier, x: np.ndarray, t: int, y: np.ndarray, raw: bool) -> np.ndarray:
    """Gradient w.r.t. x of log p(y|x_t), or of p(y|x_t) when raw is set."""
    g, _ = _guided_grad_and_class(classifier, x, t, y, raw)
    return g


def _guided_grad_and_class(
    classifier, x: np.ndarray, t: int, y: Optional[np.ndarray], raw: bool
) -> tuple[np.ndarray, np.ndarray]:
    """One classifier pass per chunk: picks y = per-row argmax when not given,
    then differentiates the picked objective. Returns (gradient, y)."""
    out = np.empty_like(x)
    y_out = np.empty(len(x), dtype=np.int64)
    step = _chunk(_GRAD_BUDGET, x[0].size if len(x) else 1)
    for s in range(0, len(x), step):
        xb = Tensor(x[s : s + step], requires_grad=True)
        logits = classifier(xb, np.full(xb.shape[0], t))
        logp = log_softmax(logits, axis=1)
        yb = logp.data.argmax(axis=1) if y is None else np.asarray(y[s : s + step])
        picked = pick(logp, yb)
        objective = tsum(exp(picked)) if raw else tsum(picked)
        out[s : s + step] = grad(objective, xb).data
        y_out[s : s + step] = yb
    return out, y_out


def _fixed_classes(guidance: GuidanceConfig, n: int) -> Optional[np.ndarray]:
    """Per-chain target classes for static mode; None means re-select per step."""
    if guidance.mode != "static":
        return None
    return np.broadcast_to(np.asarray(guidance.fixed_class, dtype=np.int64), (n,))


def _flat_norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt((v.reshape(len(v), -1) ** 2).sum(axis=1))


def _require_classifier(guidance: GuidanceConfig, classifier) -> None:
    if guidance.mode != "none" and classifier is None:
        raise ValueError(f"guidance mode '{guidance.mode}' needs a classifier")


def _ddpm_core(model, x_t, t, schedule, guidance, classifier, z):
    """One reverse step; returns (x_{t-1}, model eps, y or None, lambda*||grad||)."""
    t = int(schedule.check_t(t))
    beta = schedule.beta[t]
    alpha = schedule.alpha[t]
    abar = schedule.alpha_bar[t]
    eps_hat = _model_eps(model, x_t, t)
    mu = (x_t - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    y = None
    norm = np.zeros(len(x_t))
    if guidance.active(t):
        fixed = _fixed_classes(guidance, len(x_t))
        g, y = _guided_grad_and_class(classifier, x_t, t, fixed, guidance.use_raw_prob_grad)
        mu = mu + beta * guidance.scale * g  # sigma_t^2 = beta_t
        norm = guidance.scale * _flat_norm(g)
    if t > 1:
        mu = mu + np.sqrt(beta) * z
    return mu, eps_hat, y, norm


def ddpm_step(model, x_t: np.ndarray, t: int, schedule: Schedule,
              guidance: GuidanceConfig, classifier, rng: Rng) -> np.ndarray:
    """x_{t-1} = mu_theta + sigma_t^2 * lambda * grad + sigma_t * z (z = 0 at t = 1)."""
    _require_classifier(guidance, classifier)
    x_t = np.asarray(x_t, dtype=np.float64)
    z = rng.normal(x_t.shape) if t > 1 else 0.0
    out, _, _, _ = _ddpm_core(model, x_t, t, schedule, guidance, classifier, z)
    return out


def _ddim_core(model, x_t, t, t_prev, schedule, guidance, classifier):
    """Returns (x_{t_prev}, x0_hat, y or None, lambda*||grad||)."""
    t = int(schedule.check_t(t))
    t_prev = int(schedule.check_t(t_prev, allow_zero=True))
    if t_prev >= t:
        raise ValueError(f"need t > t_prev, got {t} <= {t_prev}")
    abar = schedule.alpha_bar[t]
    if abar == 0.0:
        raise ValueError("alpha_bar at t is zero; x0 prediction undefined")
    abar_prev = schedule.alpha_bar[t_prev]
    eps_hat = _model_eps(model, x_t, t)
    y = None
    norm = np.zeros(len(x_t))
    if guidance.active(t):
        fixed = _fixed_classes(guidance, len(x_t))
        g, y = _guided_grad_and_class(classifier, x_t, t, fixed, guidance.use_raw_prob_grad)
        eps_hat = eps_hat - guidance.scale * np.sqrt(1.0 - abar) * g
        norm = guidance.scale * _flat_norm(g)
    x0_hat = (x_t - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)
    x_prev = np.sqrt(abar_prev) * x0_hat + np.sqrt(1.0 - abar_prev) * eps_hat
    return x_prev, x0_hat, y, norm


def ddim_step(model, x_t: np.ndarray, t: int, t_prev: int, schedule: Schedule,
              guidance: GuidanceConfig, classifier) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic reverse step; returns (x_{t_prev}, predicted x0)."""
    _require_classifier(guidance, classifier)
    x_t = np.asarray(x_t, dtype=np.float64)
    x_prev, x0_hat, _, _ = _ddim_core(model, x_t, t, t_prev, schedule, guidance, classifier)
    return x_prev, x0_hat


def ddim_grid(T: int, steps: int) -> list[tuple[int, int]]:
    """Uniform-stride (t, t_prev) pairs from T down to 0."""
    ts = np.unique(np.round(np.linspace(0, T, steps + 1)).astype(int))[::-1]
    return list(zip(ts[:-1], ts[1:]))


def _validate_grid(pairs, T: int) -> None:
    seq = [pairs[0][0]] + [p[1] for p in pairs]
    if seq[0] > T or seq[-1] < 0:
        raise ValueError("step grid leaves [T..0]")
    for (ta, tp), (tb, _) in zip(pairs, pairs[1:]):
        if tp != tb:
            raise ValueError("step grid pairs must chain t -> t_prev")
    if any(b >= a for a, b in zip(seq, seq[1:])):
        raise ValueError("step grid must be strictly decreasing")


def sample(
    model,
    schedule: Schedule,
    n: int,
    sampler: str,
    guidance: GuidanceConfig,
    classifier,
    rng: Rng,
    ddim_steps: int = 50,
    record: Optional[RecordSpec] = None,
    grid: Optional[list[tuple[int, int]]] = None,
) -> tuple[np.ndarray, TrajectoryBatch]:
    """Run n independent reverse chains from x_T ~ N(0, I).

    sampler is "ddpm" (all T steps, noise injected) or "ddim" (deterministic,
    uniform stride with ddim_steps steps unless an explicit grid is given).
    """
    _require_classifier(guidance, classifier)
    guidance.validate(schedule.T, getattr(classifier, "k", None))
    if sampler not in ("ddpm", "ddim"):
        raise ValueError(f"unknown sampler: {sampler}")
    record = record or RecordSpec()
    sample_shape = getattr(model, "sample_shape", None)
    if sample_shape is None:
        raise ValueError("model must expose sample_shape")
    if sampler == "ddpm":
        step_ts = list(range(schedule.T, 0, -1))
    else:
        pairs = grid if grid is not None else ddim_grid(schedule.T, ddim_steps)
        if grid is not None:
            _validate_grid(pairs, schedule.T)
        step_ts = [t for t, _ in pairs]
    m = len(step_ts)
    ts_arr = np.array(step_ts, dtype=np.int64)

    # disjoint sub-streams: one for x_T, one per step; a run owns the whole
    # (index << 16) block so adjacent run indices can never collide
    sub = lambda j: rng.derive(rng.domain, (rng.index << 16) + j)
    x = sub(0).normal((n,) + tuple(sample_shape))
    traj = TrajectoryBatch(ts_arr, np.empty(0), np.arange(n, dtype=np.int64))
    if record.y_star:
        traj.y_star = np.full((n, m), -1, dtype=np.int16)
    if record.guidance_norm:
        traj.guidance_norm = np.zeros((n, m), dtype=np.float32)
    if record.x0_hat:
        traj.x0_hat = np.zeros((n, m) + tuple(sample_shape), dtype=np.float32)
    window = 0
    if record.vf_window_fraction is not None and m > 0:
        window = max(1, int(round(record.vf_window_fraction * m)))
        acc = np.zeros((n,) + tuple(sample_shape))
        acc_sq = np.zeros_like(acc)
    if n == 0:
        traj.x0 = x
        return x, traj

    need_x0_hat = record.x0_hat or window > 0
    for i, t in enumerate(step_ts):
        if sampler == "ddpm":
            z = sub(1 + i).normal(x.shape) if t > 1 else 0.0
            x_next, eps_hat, y, norm = _ddpm_core(model, x, t, schedule, guidance, classifier, z)
            x0_hat = None
            if need_x0_hat:
                abar = schedule.alpha_bar[t]
                x0_hat = (x - np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(abar)
        else:
            t_prev = pairs[i][1]
            x_next, x0_hat, y, norm = _ddim_core(model, x, t, t_prev, schedule, guidance, classifier)
        if record.y_star and y is not None:
            traj.y_star[:, i] = y
        if record.guidance_norm:
            traj.guidance_norm[:, i] = norm
        if record.x0_hat:
            traj.x0_hat[:, i] = x0_hat
        if window and i >= m - window:
            acc += x0_hat
            acc_sq += x0_hat**2
        x = x_next

    traj.x0 = x
    if window:
        mean = acc / window
        var = acc_sq / window - mean**2
        traj.vf_scores = np.maximum(var, 0.0).reshape(n, -1).sum(axis=1)
        traj.vf_window_steps = window
    traj.meta = {
        "sampler": sampler,
        "steps": m,
        "guidance_mode": guidance.mode,
        "scale": guidance.scale,
        "interval": guidance.interval,
    }
    return x, traj


def guidance_norm_series(traj: TrajectoryBatch, chain: int = 0) -> list[tuple[int, float]]:
    """Per-step (t, ||lambda * grad||) for one chain; zeros outside the interval."""
    if traj.guidance_norm is None:
        raise ValueError("trajectory was not recorded with guidance_norm")
    row = traj.guidance_norm[chain]
    return [(int(t), float(v)) for t, v in zip(traj.ts, row)]


__all__ = [
    "GuidanceConfig",
    "RecordSpec",
    "TrajectoryBatch",
    "select_class",
    "ddpm_step",
    "ddim_step",
    "ddim_grid",
    "sample",
    "guidance_norm_series",
]
