"""Noisy-sample classifier training and class log-probability gradients."""

from __future__ import annotations

import numpy as np

from .diffusion import Schedule, forward_noise
from .numerics import grad, no_grad
from .numerics.optim import Adam
from .numerics.rng import DOMAIN_TRAIN, Rng
from .numerics.tensor import Tensor, log_softmax, pick, tsum

HOLDOUT_FRACTION = 0.05
ACCURACY_BUCKETS = 10


def _check_labels(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    present = set(np.unique(labels).tolist())
    missing = sorted(set(range(k)) - present)
    if missing:
        raise ValueError(f"classes absent from training data: {missing}")
    return labels


def train_classifier(
    x0: np.ndarray,
    labels: np.ndarray,
    schedule: Schedule,
    model,
    steps: int,
    rng: Rng,
    batch_size: int = 256,
    lr: float = 1e-3,
    on_step=None,
) -> list[tuple[float, float]]:
    """Cross-entropy training on forward-noised inputs at uniform t.

    5% of the data is held out; the returned curve is the holdout accuracy in
    10 equal t-buckets, as (bucket_center_t, accuracy) rows.
    """
    data = np.asarray(x0, dtype=np.float64)
    labels = _check_labels(labels, model.k)
    n = len(data)
    if n != len(labels):
        raise ValueError("data/label length mismatch")
    order = rng.permutation(n)
    n_hold = max(1, int(round(HOLDOUT_FRACTION * n)))
    hold_idx, train_idx = order[:n_hold], order[n_hold:]
    train_x, train_y = data[train_idx], labels[train_idx]
    _check_labels(train_y, model.k)

    named = model.named_parameters()
    params = [p for _, p in named]
    opt = Adam(named, lr=lr)
    stream = rng.derive(DOMAIN_TRAIN, rng.index + 1)
    for step in range(1, steps + 1):
        idx = stream.integers(0, len(train_x), (batch_size,))
        t = stream.integers(1, schedule.T + 1, (batch_size,))
        eps = stream.normal((batch_size,) + train_x.shape[1:])
        x_t = forward_noise(train_x[idx], t, eps, schedule)
        logits = model(Tensor(x_t), t)
        logp = pick(log_softmax(logits, axis=1), train_y[idx])
        loss = tsum(logp) * (-1.0 / batch_size)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise RuntimeError(f"training diverged: loss={loss_val} at step {step}")
        opt.step(grad(loss, params))
        if on_step is not None:
            on_step(step, model, loss_val)
    return accuracy_by_t(model, data[hold_idx], labels[hold_idx], schedule,
                         rng.derive(DOMAIN_TRAIN, rng.index + 2))


def accuracy_by_t(
    model, x0: np.ndarray, labels: np.ndarray, schedule: Schedule, rng: Rng,
    buckets: int = ACCURACY_BUCKETS, batch_size: int = 512,
) -> list[tuple[float, float]]:
    """Holdout accuracy per t-bucket; each point noised at a t drawn in-bucket."""
    x0 = np.asarray(x0, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    edges = np.linspace(1, schedule.T + 1, buckets + 1).astype(np.int64)
    curve: list[tuple[float, float]] = []
    for b in range(buckets):
        lo, hi = int(edges[b]), int(edges[b + 1])
        t = rng.integers(lo, hi, (len(x0),))
        eps = rng.normal(x0.shape)
        x_t = forward_noise(x0, t, eps, schedule)
        hits = 0
        for s in range(0, len(x_t), batch_size):
            pred = log_prob(model, x_t[s : s + batch_size], t[s : s + batch_size])
            hits += int(np.sum(pred.argmax(axis=1) == labels[s : s + batch_size]))
        curve.append(((lo + hi - 1) / 2.0, hits / len(x0)))
    return curve


def log_prob(model, x_t: np.ndarray, t) -> np.ndarray:
    """log p(y|x_t) rows for a batch; exp of each row sums to 1."""
    x_t = np.asarray(x_t, dtype=np.float64)
    batch = np.atleast_2d(x_t) if x_t.ndim == 1 else x_t
    tb = np.broadcast_to(np.asarray(t), (batch.shape[0],))
    with no_grad():
        logits = model(Tensor(batch), tb)
        out = log_softmax(logits, axis=1).data.astype(np.float64)
    return out[0] if x_t.ndim == 1 else out


def class_grad(model, x_t: np.ndarray, t, y) -> np.ndarray:
    """Exact gradient of log p(y|x_t) with respect to x_t, batched."""
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    batch = np.atleast_2d(x_t) if single else x_t
    tb = np.broadcast_to(np.asarray(t), (batch.shape[0],))
    yb = np.broadcast_to(np.asarray(y, dtype=np.int64), (batch.shape[0],))
    xv = Tensor(batch, requires_grad=True)
    logits = model(xv, tb)
    picked = pick(log_softmax(logits, axis=1), yb)
    g = grad(tsum(picked), xv).data.astype(np.float64)
    return g[0] if single else g


__all__ = [
    "train_classifier",
    "accuracy_by_t",
    "log_prob",
    "class_grad",
    "HOLDOUT_FRACTION",
]
