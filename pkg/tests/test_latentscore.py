import numpy as np
import pytest

from dynguide.datasets.gmm import GmmSpec
from dynguide.diffusion import ClosedFormGmmEps, Schedule, gmm_log_density_t, gmm_score_t
from dynguide.latentscore import (
    ScoreField1D,
    decoder_logdet_grad,
    latent_score,
    latent_traversal_field,
    perturb_and_average_score,
    pullback_score,
    score_field_gmm,
    train_vae,
    vae_losses,
)
from dynguide.models import LinearDecoder
from dynguide.numerics.rng import DOMAIN_LATENT, Rng
from dynguide.numerics.tensor import Tensor, concat

from _stubs import BayesGmmClassifier


@pytest.fixture(scope="module")
def sched():
    return Schedule.linear(1000, 1e-4, 0.02)


@pytest.fixture(scope="module")
def spec():
    return GmmSpec().scaled()


# -- ScoreField1D container ------------------------------------------------------------


def test_field_requires_equal_lengths():
    with pytest.raises(ValueError, match="length"):
        ScoreField1D("x[0]", np.arange(5.0), {"true": np.arange(4.0)})


def test_field_rows_order():
    fld = ScoreField1D("x[0]", np.array([0.0, 1.0]),
                       {"guided": np.array([3.0, 4.0]),
                        "unguided": np.array([1.0, 2.0])})
    assert fld.header() == ["position", "unguided", "guided"]
    assert fld.rows() == [[0.0, 1.0, 3.0], [1.0, 2.0, 4.0]]


# -- data-space score field --------------------------------------------------------------


def test_field_lambda_zero_guided_equals_unguided(sched, spec):
    model = ClosedFormGmmEps(spec, sched)
    clf = BayesGmmClassifier(spec, sched)
    grid = np.linspace(-0.1, 0.5, 31)
    fld = score_field_gmm(model, clf, spec, sched, 0, grid, 5, 0.0)
    assert np.array_equal(fld.series["guided"], fld.series["unguided"])


def test_field_true_matches_fd_of_log_density(sched, spec):
    # numerical differentiation of the closed-form log density along the axis
    grid = np.linspace(-0.75, 0.75, 101)
    t = 7
    fld = score_field_gmm(ClosedFormGmmEps(spec, sched), None, spec, sched,
                          0, grid, t, 0.0)
    h = 1e-6
    pts_p = np.stack([grid + h, np.zeros_like(grid)], axis=1)
    pts_m = np.stack([grid - h, np.zeros_like(grid)], axis=1)
    fd = (gmm_log_density_t(spec, pts_p, t, sched)
          - gmm_log_density_t(spec, pts_m, t, sched)) / (2 * h)
    denom = np.maximum(np.abs(fd), 1.0)
    assert np.max(np.abs(fld.series["true"] - fd) / denom) <= 1e-6


def test_field_true_score_vanishes_at_mode_centers(sched, spec):
    # scan the central row: on-center magnitudes are local minima of |s_x|
    grid = np.linspace(-0.85, 0.85, 341)  # step 0.005 covers centers exactly
    fld = score_field_gmm(ClosedFormGmmEps(spec, sched), None, spec, sched,
                          0, grid, 1, 0.0)
    mags = np.abs(fld.series["true"])
    centers_x = np.unique(spec.centers[:, 0])
    for cx in centers_x:
        i = int(np.argmin(np.abs(grid - cx)))
        window = mags[max(0, i - 20) : i + 21]
        assert mags[i] <= window.min() + 1e-9


def test_field_sharpening_between_modes(sched, spec):
    # exact model + exact posterior classifier: guidance toward the argmax
    # class points away from the midpoint, enlarging the mean magnitude
    model = ClosedFormGmmEps(spec, sched)
    clf = BayesGmmClassifier(spec, sched)
    a, b = spec.centers[12, 0], spec.centers[13, 0]
    grid = np.linspace(a, b, 101)[1:-1]
    fld = score_field_gmm(model, clf, spec, sched, 0, grid, 10, 2.0)
    assert np.mean(np.abs(fld.series["guided"])) > np.mean(np.abs(fld.series["unguided"]))


def test_field_rejects_bad_axis_and_grid(sched, spec):
    model = ClosedFormGmmEps(spec, sched)
    with pytest.raises(ValueError, match="axis"):
        score_field_gmm(model, None, spec, sched, 2, np.zeros(3), 5, 0.0)
    with pytest.raises(ValueError, match="finite"):
        score_field_gmm(model, None, spec, sched, 0, np.array([0.0, np.inf]), 5, 0.0)


# -- perturb-and-average (clean-score estimator) -----------------------------------------


class UnitGaussianEps:
    """Exact eps-model for data ~ N(0, I): score(x,t) = -x, so
    eps(x,t) = sqrt(1-abar)*x."""

    def __init__(self, schedule):
        self.schedule = schedule
        self.sample_shape = (2,)

    def __call__(self, x, t):
        ab = self.schedule.alpha_bar[np.asarray(t)]
        return Tensor(np.sqrt(1.0 - ab)[:, None] * x.data)


def test_perturb_average_unit_gaussian_converges(sched):
    # true clean score of N(0,1) data at x0 is -x0
    model = UnitGaussianEps(sched)
    x0 = np.array([0.5, -1.25])
    rng = Rng(3, DOMAIN_LATENT, 0)
    est = perturb_and_average_score(model, x0, 5, 4096, sched, rng)
    assert np.allclose(est, -x0, atol=0.05)


def test_perturb_average_single_draw_equals_one_sample(sched):
    model = UnitGaussianEps(sched)
    x0 = np.array([0.3, 0.7])
    est = perturb_and_average_score(model, x0, 9, 1, sched, Rng(5, DOMAIN_LATENT, 1))
    # recompute the single draw by hand
    from dynguide.diffusion import forward_noise, score_from_eps

    eps = Rng(5, DOMAIN_LATENT, 1).normal((1, 2))
    x_t = forward_noise(x0[None], 9, eps, sched)
    expect = score_from_eps(model(Tensor(x_t), np.array([9])).data, 9, sched)[0]
    assert np.array_equal(est, expect)


def test_perturb_average_symmetric_point_goes_to_zero(sched):
    spec2 = GmmSpec(centers=np.array([[-0.4, 0.0], [0.4, 0.0]]),
                    weights=np.array([0.5, 0.5]), sigma=0.05)
    model = ClosedFormGmmEps(spec2, sched)
    # t=100 keeps per-draw scores O(4) so the Monte Carlo error is small;
    # at tiny t the draws sit ~8 sigma from both modes and single-draw
    # magnitudes explode, drowning the symmetric cancellation
    est_small = perturb_and_average_score(model, np.zeros(2), 100, 64, sched,
                                          Rng(7, DOMAIN_LATENT, 2))
    est_big = perturb_and_average_score(model, np.zeros(2), 100, 8192, sched,
                                        Rng(7, DOMAIN_LATENT, 2))
    assert abs(est_big[0]) < 0.15
    assert abs(est_big[0]) < abs(est_small[0])


def test_perturb_average_rejects_zero_draws(sched):
    with pytest.raises(ValueError, match="n_noise"):
        perturb_and_average_score(UnitGaussianEps(sched), np.zeros(2), 5, 0, sched,
                                  Rng(1, DOMAIN_LATENT, 0))


def test_perturb_average_variance_shrinks_like_one_over_n(sched):
    # regression slope of log variance against log n_noise within :(-1 +- 0.15)
    model = UnitGaussianEps(sched)
    x0 = np.array([0.8, -0.2])
    ns = [8, 32, 128, 512]
    variances = []
    for n in ns:
        ests = [perturb_and_average_score(model, x0, 5, n, sched,
                                          Rng(11, DOMAIN_LATENT, 100 + rep))[0]
                for rep in range(48)]
        variances.append(np.var(ests))
    slope = np.polyfit(np.log(ns), np.log(variances), 1)[0]
    assert -1.15 <= slope <= -0.85


# -- decoder log-determinant gradient -----------------------------------------------------


class QuadDecoder:
    """D(z) = (z, z^2); log sqrt det J^T J = 0.5 log(1 + 4 z^2)."""

    def __call__(self, z):
        return concat([z, z * z], axis=1)


def test_logdet_grad_worked_example():
    g = decoder_logdet_grad(QuadDecoder(), np.array([1.0]))
    assert abs(g[0] - 0.8) <= 1e-6  # 4z/(1+4z^2) at z=1


def test_logdet_grad_matches_fd_on_quad():
    z0, h = 0.65, 1e-5
    g = decoder_logdet_grad(QuadDecoder(), np.array([z0]))
    f = lambda z: 0.5 * np.log(1.0 + 4.0 * z * z)
    fd = (f(z0 + h) - f(z0 - h)) / (2 * h)
    assert abs(g[0] - fd) / abs(fd) <= 1e-6


def test_logdet_grad_zero_for_linear_decoders():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 3))
    g = decoder_logdet_grad(LinearDecoder(a), rng.normal(size=3))
    assert np.array_equal(g, np.zeros(3))


def test_logdet_grad_scalar_doubling_decoder():
    g = decoder_logdet_grad(LinearDecoder(np.array([[2.0]])), np.array([3.0]))
    assert np.array_equal(g, np.zeros(1))


def test_logdet_grad_singular_jacobian_reports_condition_failure():
    a = np.array([[1.0, 1.0], [2.0, 2.0]])  # rank 1 -> J^T J singular
    with pytest.raises(ValueError, match="condition failure"):
        decoder_logdet_grad(LinearDecoder(a), np.zeros(2))


# -- latent score (pullback + logdet) ------------------------------------------------------


def test_pullback_linear_decoder_is_exact_transpose():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(6, 4))
    dec = LinearDecoder(a)
    s = rng.normal(size=6)
    got = pullback_score(dec, rng.normal(size=4), s)
    assert np.allclose(got, a.T @ s, rtol=0, atol=1e-15)


def test_latent_score_identity_decoder_equals_data_estimate(sched, spec):
    model = ClosedFormGmmEps(spec, sched)
    dec = LinearDecoder(np.eye(2))
    z = np.array([0.21, -0.17])
    rng = Rng(13, DOMAIN_LATENT, 5)
    ls = latent_score(dec, model, z, 4, 64, sched, rng)
    direct = perturb_and_average_score(model, z, 4, 64, sched,
                                       Rng(13, DOMAIN_LATENT, 5))
    assert np.array_equal(ls, direct)  # J = I and the log-det term is zero


def test_latent_score_linear_decoder_chain_rule(sched, spec):
    model = ClosedFormGmmEps(spec, sched)
    a = np.array([[0.9, 0.1], [-0.2, 1.1]])
    dec = LinearDecoder(a)
    z = np.array([0.05, 0.3])
    rng = Rng(17, DOMAIN_LATENT, 6)
    ls = latent_score(dec, model, z, 4, 64, sched, rng)
    s_x = perturb_and_average_score(model, a @ z, 4, 64, sched,
                                    Rng(17, DOMAIN_LATENT, 6))
    assert np.allclose(ls, a.T @ s_x, rtol=0, atol=1e-12)


def test_latent_score_rotation_preserves_norm(sched, spec):
    # orthogonal decoders are isometries: |latent score| == |data score|
    model = ClosedFormGmmEps(spec, sched)
    z = np.array([0.12, -0.31])
    base = np.random.default_rng(4)
    for k in range(5):
        theta = base.uniform(0, 2 * np.pi)
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        dec = LinearDecoder(rot)
        rng = Rng(19, DOMAIN_LATENT, 30 + k)
        ls = latent_score(dec, model, z, 4, 32, sched, rng)
        s_x = perturb_and_average_score(model, rot @ z, 4, 32, sched,
                                        Rng(19, DOMAIN_LATENT, 30 + k))
        assert abs(np.linalg.norm(ls) - np.linalg.norm(s_x)) <= 1e-9


# -- latent traversals ---------------------------------------------------------------------


def test_traversal_lambda_zero_guided_equals_unguided(sched, spec):
    model = ClosedFormGmmEps(spec, sched)
    clf = BayesGmmClassifier(spec, sched)
    dec = LinearDecoder(np.eye(2))
    fld = latent_traversal_field(dec, model, clf, np.zeros(2), 0,
                                 np.linspace(-0.4, 0.4, 9), 4, 0.0, 16, sched,
                                 Rng(23, DOMAIN_LATENT, 7))
    assert np.array_equal(fld.series["guided"], fld.series["unguided"])


def test_traversal_guided_exceeds_unguided_on_invalid_segment(sched, spec):
    # z[0] interpolates between two adjacent mode centers (the inter-mode
    # stretch decodes to hallucinated points); z[1] slides along the valid
    # mode row. Guidance should sharpen dim 0 and barely touch dim 1.
    from dynguide.halleval import gmm_hallucination_batch

    model = ClosedFormGmmEps(spec, sched)
    clf = BayesGmmClassifier(spec, sched)
    a, b = spec.centers[12], spec.centers[13]
    mid = (a + b) / 2.0
    dec = LinearDecoder(np.array([[1.0, 0.0], [0.0, 1.0]]), b=mid)
    grid = np.linspace(-0.15, 0.15, 13)
    fld = latent_traversal_field(dec, model, clf, np.zeros(2), 0, grid, 8, 3.0,
                                 64, sched, Rng(29, DOMAIN_LATENT, 8))
    decoded = np.stack([grid + mid[0], np.full_like(grid, mid[1])], axis=1)
    invalid = np.array([v.is_hallucination
                        for v in gmm_hallucination_batch(spec, decoded)])
    assert invalid.any()
    gd = np.abs(fld.series["guided"][invalid])
    un = np.abs(fld.series["unguided"][invalid])
    assert gd.mean() > un.mean()


def test_traversal_position_dimension_barely_affected(sched, spec):
    model = ClosedFormGmmEps(spec, sched)
    clf = BayesGmmClassifier(spec, sched)
    center = spec.centers[12]
    dec = LinearDecoder(np.eye(2), b=center)
    grid = np.linspace(-0.02, 0.02, 9)  # stays inside the central mode
    fld = latent_traversal_field(dec, model, clf, np.zeros(2), 1, grid, 8, 3.0,
                                 64, sched, Rng(31, DOMAIN_LATENT, 9))
    rng_span = np.ptp(fld.series["unguided"])
    diff = np.max(np.abs(fld.series["guided"] - fld.series["unguided"]))
    assert diff <= 0.10 * rng_span


def test_traversal_rejects_out_of_range_dim(sched, spec):
    model = ClosedFormGmmEps(spec, sched)
    with pytest.raises(ValueError, match="dim"):
        latent_traversal_field(LinearDecoder(np.eye(2)), model, None, np.zeros(2),
                               2, np.zeros(3), 4, 0.0, 8, sched,
                               Rng(1, DOMAIN_LATENT, 0))


# -- small autoencoder ----------------------------------------------------------------------


def test_vae_losses_are_nonnegative_and_kl_zero_at_standard_normal():
    from dynguide.models import ShapesDecoder, ShapesEncoder

    rng = Rng(37, DOMAIN_LATENT, 11)
    enc = ShapesEncoder(rng.derive(rng.domain, 1), latent=4, base=4)
    dec = ShapesDecoder(rng.derive(rng.domain, 2), latent=4, base=4)
    x = Tensor(np.zeros((2, 1, 32, 32)))
    rec, kl = vae_losses(enc, dec, x, np.zeros((2, 4)))
    assert rec.data >= 0.0
    # force mu=0, logvar=0 -> KL exactly 0
    enc.fc_mu.weight.data[:] = 0.0
    enc.fc_mu.bias.data[:] = 0.0
    enc.fc_logvar.weight.data[:] = 0.0
    enc.fc_logvar.bias.data[:] = 0.0
    _, kl0 = vae_losses(enc, dec, x, np.zeros((2, 4)))
    assert kl0.data == 0.0


@pytest.mark.slow
def test_vae_trains_and_traversal_runs(sched):
    from dynguide.datasets.shapes import generate_shapes

    imgs, _ = generate_shapes("single", 64, 32, Rng(41, DOMAIN_LATENT, 12))
    px = np.stack([im.pixels for im in imgs])[:, None, :, :]
    enc, dec, curve = train_vae(px, 120, Rng(41, DOMAIN_LATENT, 13), latent=4,
                                base=4, batch_size=16)
    assert curve[-1][1] < curve[0][1]  # loss moved down

    class FlatEps:
        sample_shape = (1, 32, 32)

        def __call__(self, x, t):
            return Tensor(np.zeros_like(x.data))

    fld = latent_traversal_field(dec, FlatEps(), None, np.zeros(4), 0,
                                 np.linspace(-1, 1, 3), 3, 0.0, 4, sched,
                                 Rng(41, DOMAIN_LATENT, 14))
    assert len(fld.positions) == 3
    assert np.all(np.isfinite(fld.series["unguided"]))
