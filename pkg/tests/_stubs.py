"""Analytic model stubs shared across test modules."""

import numpy as np

from dynguide.datasets.gmm import GmmSpec
from dynguide.diffusion import Schedule
from dynguide.numerics.tensor import Tensor, tsum


class FixedLogits:
    """Classifier stub that returns the same logits row for every input.

    The row is routed through a zero-weight linear map of the input so the
    output still participates in the autodiff graph.
    """

    def __init__(self, row):
        self.row = np.asarray(row, dtype=np.float64)
        self.k = len(self.row)

    def __call__(self, x: Tensor, t) -> Tensor:
        flat = x.reshape((x.shape[0], -1))
        dead = flat @ Tensor(np.zeros((flat.shape[1], self.k)))
        return dead + Tensor(np.broadcast_to(self.row, (x.shape[0], self.k)).copy())


class BayesGmmClassifier:
    """Exact posterior over mixture components under the forward process.

    logit_i(x, t) = log w_i - ||x - sqrt(abar_t) mu_i||^2 / (2 var_t) with
    var_t = abar_t sigma^2 + (1 - abar_t). Differentiable through Tensor ops.
    """

    def __init__(self, spec: GmmSpec, schedule: Schedule):
        self.spec = spec
        self.schedule = schedule
        self.k = spec.k

    def __call__(self, x: Tensor, t) -> Tensor:
        ts = np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],))
        abar = self.schedule.alpha_bar[ts]  # (n,)
        var = abar * self.spec.sigma**2 + (1.0 - abar)
        means = np.sqrt(abar)[:, None, None] * self.spec.centers[None, :, :]  # (n, k, 2)
        diff = x.reshape((x.shape[0], 1, 2)) - Tensor(means)
        d2 = tsum(diff * diff, axis=2)
        return d2 * Tensor(-1.0 / (2.0 * var[:, None])) + Tensor(np.log(self.spec.weights))


class ConstEps:
    """Denoiser stub predicting a constant noise field."""

    sample_shape = (2,)

    def __init__(self, value: float = 0.0, shape=(2,)):
        self.value = value
        self.sample_shape = tuple(shape)

    def __call__(self, x: Tensor, t) -> Tensor:
        return Tensor(np.full(x.shape, self.value, dtype=np.float64))
