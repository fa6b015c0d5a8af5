import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from texdistill import autodiff as ad
from texdistill import guidance as gd

finite_arrays = hnp.arrays(np.float64, st.integers(1, 32),
                           elements=st.floats(-1e6, 1e6))


class FixedSchedule:
    """Duck-typed schedule pinning alpha_bar for formula tests."""

    def __init__(self, alpha):
        self.alpha = alpha

    def alpha_bar(self, t):
        return self.alpha


class StubDenoiser:
    def __init__(self, cond, uncond):
        self.cond = np.asarray(cond, dtype=np.float64)
        self.uncond = np.asarray(uncond, dtype=np.float64)

    def predict(self, request):
        return self.uncond if request.uncond else self.cond


# -- schedules -----------------------------------------------------------------

@pytest.mark.parametrize("family", ["scaled_linear", "cosine"])
def test_schedule_invariants(family):
    sched = gd.NoiseSchedule(family=family)
    assert sched.alpha_bar(0.0) >= 0.999
    assert sched.alpha_bar(1.0) <= 0.01
    ts = np.linspace(0, 1, 200)
    values = [sched.alpha_bar(t) for t in ts]
    assert np.all(np.diff(values) <= 1e-15)


def test_schedule_unknown_family():
    with pytest.raises(gd.GuidanceConfigError):
        gd.NoiseSchedule(family="quartic")


def test_schedule_rejects_out_of_range_t():
    sched = gd.NoiseSchedule()
    with pytest.raises(gd.GuidanceConfigError):
        sched.alpha_bar(1.5)


# -- add_noise -----------------------------------------------------------------

def test_add_noise_zero_noise_endpoint():
    z = np.array([1.0, -2.0])
    out = gd.add_noise(z, np.array([5.0, 5.0]), 0.5, FixedSchedule(1.0))
    assert np.array_equal(out, z)


def test_add_noise_pure_noise_endpoint():
    eps = np.array([5.0, -5.0])
    out = gd.add_noise(np.array([1.0, 1.0]), eps, 0.5, FixedSchedule(0.0))
    assert np.array_equal(out, eps)


def test_add_noise_direct_formula():
    out = gd.add_noise(np.array([2.0]), np.array([4.0]), 0.5, FixedSchedule(0.25))
    assert out[0] == pytest.approx(0.5 * 2.0 + np.sqrt(0.75) * 4.0, rel=1e-12)


def test_add_noise_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        gd.add_noise(np.zeros(3), np.zeros(4), 0.5, FixedSchedule(0.5))


def test_add_noise_differentiable_in_z():
    z = ad.tensor([1.0, 2.0], requires_grad=True)
    out = gd.add_noise(z, np.zeros(2), 0.5, FixedSchedule(0.25))
    out.sum().backward()
    assert np.allclose(z.grad, 0.5)


def test_add_noise_marginal_variance():
    rng = np.random.default_rng(0)
    sched = gd.NoiseSchedule()
    t, sigma2, mu = 0.63, 0.8, 1.3
    a = sched.alpha_bar(t)
    z = rng.normal(mu, np.sqrt(sigma2), size=100_000)
    eps = rng.normal(size=100_000)
    z_t = gd.add_noise(z, eps, t, sched)
    expected = a * sigma2 + (1.0 - a)
    assert np.var(z_t) == pytest.approx(expected, rel=0.02)


# -- CFG -------------------------------------------------------------------------

def test_cfg_omega_zero_is_conditional():
    den = StubDenoiser([1.0, 2.0], [9.0, 9.0])
    req = gd.DenoiserRequest(np.zeros(2), "p", 0.5)
    assert np.array_equal(gd.cfg_predict(den, req, 0.0), den.cond)


def test_cfg_omega_minus_one_is_unconditional():
    den = StubDenoiser([1.0, 2.0], [9.0, -3.0])
    req = gd.DenoiserRequest(np.zeros(2), "p", 0.5)
    assert np.allclose(gd.cfg_predict(den, req, -1.0), den.uncond, atol=1e-15)


def test_cfg_degenerate_equality():
    den = StubDenoiser([1.5, -0.5], [1.5, -0.5])
    req = gd.DenoiserRequest(np.zeros(2), "p", 0.5)
    for omega in (0.0, 1.0, 7.5, -2.0):
        assert np.allclose(gd.cfg_predict(den, req, omega), den.cond, atol=1e-12)


# -- SDS / DSD ---------------------------------------------------------------------

def test_sds_fixed_point_zero():
    e = np.array([0.1, -0.2])
    assert np.array_equal(gd.sds_gradient(e, e, 1.0), np.zeros(2))


def test_sds_weight_annihilation():
    assert np.array_equal(gd.sds_gradient(np.ones(3), np.zeros(3), 0.0), np.zeros(3))


def test_sds_identity_weighting():
    out = gd.sds_gradient(np.array([0.5, -0.5]), np.zeros(2), 1.0)
    assert np.array_equal(out, [0.5, -0.5])


@settings(max_examples=100, deadline=None)
@given(pos=finite_arrays, data=st.data(), w=st.floats(0.0, 4.0))
def test_dsd_reduces_to_sds_at_lambda_zero(pos, data, w):
    shape = st.just(pos.shape)
    neg = data.draw(hnp.arrays(np.float64, shape, elements=st.floats(-1e6, 1e6)))
    eps = data.draw(hnp.arrays(np.float64, shape, elements=st.floats(-1e6, 1e6)))
    diff = gd.dsd_gradient(pos, neg, eps, 0.0, w) - gd.sds_gradient(pos, eps, w)
    assert np.max(np.abs(diff)) == 0.0


def test_dsd_equal_predictions_algebra():
    rng = np.random.default_rng(2)
    pred = rng.normal(size=5)
    eps = rng.normal(size=5)
    lam, w = 0.3, 1.7
    out = gd.dsd_gradient(pred, pred, eps, lam, w)
    assert np.allclose(out, w * (1 - lam) * (pred - eps), atol=1e-14)


def test_dsd_direct_formula():
    out = gd.dsd_gradient(np.array([1.0]), np.array([0.4]), np.array([0.2]), 0.5, 1.0)
    assert out[0] == pytest.approx(1.0 - 0.2 - 0.1, abs=1e-15)


def test_dsd_rejects_bad_lambda():
    with pytest.raises(gd.GuidanceConfigError):
        gd.dsd_gradient(np.ones(1), np.ones(1), np.ones(1), 1.0, 1.0)
    with pytest.raises(gd.GuidanceConfigError):
        gd.dsd_gradient(np.ones(1), np.ones(1), np.ones(1), -0.1, 1.0)


def test_dsd_linearity_coefficients():
    rng = np.random.default_rng(3)
    pos, neg, eps = rng.normal(size=(3, 6))
    lam, w = 0.35, 1.25
    base = gd.dsd_gradient(pos, neg, eps, lam, w)
    probe = np.zeros(6)
    probe[2] = 1.0
    assert np.allclose(gd.dsd_gradient(pos + probe, neg, eps, lam, w) - base,
                       w * probe, atol=1e-12)
    assert np.allclose(gd.dsd_gradient(pos, neg + probe, eps, lam, w) - base,
                       -lam * w * probe, atol=1e-12)
    assert np.allclose(gd.dsd_gradient(pos, neg, eps + probe, lam, w) - base,
                       -(1 - lam) * w * probe, atol=1e-12)


def test_dsd_loss_lambda_zero_is_positive_residual():
    rng = np.random.default_rng(4)
    pos, neg, eps = rng.normal(size=(3, 10))
    w = 0.8
    loss = gd.dsd_loss_from_predictions(pos, neg, eps, 0.0, w)
    assert loss == pytest.approx(w * np.sum((pos - eps) ** 2), rel=1e-12)


def test_dsd_loss_identical_residuals_halved():
    rng = np.random.default_rng(5)
    pred, eps = rng.normal(size=(2, 10))
    full = gd.dsd_loss_from_predictions(pred, pred, eps, 0.0, 1.0)
    half = gd.dsd_loss_from_predictions(pred, pred, eps, 0.5, 1.0)
    assert half == pytest.approx(0.5 * full, rel=1e-12)


def test_dsd_loss_perfect_denoiser_is_zero():
    sched = gd.NoiseSchedule()
    mu = np.full((4, 4, 3), 0.7)
    den = gd.AnalyticDenoiser(sched, targets={"p": gd.GaussianSpec(0.7, 0.0),
                                              "n": gd.GaussianSpec(0.7, 0.0)})
    eps = np.random.default_rng(6).normal(size=mu.shape)
    loss = gd.dsd_loss(den, sched, mu, mu, "p", "n", 0.5, eps, 0.5, 1.0)
    assert abs(loss) < 1e-18


# -- analytic denoiser ---------------------------------------------------------------

def test_analytic_zero_at_scaled_mean():
    sched = gd.NoiseSchedule()
    mu = np.full((2, 2, 3), 0.4)
    den = gd.AnalyticDenoiser(sched, default=gd.GaussianSpec(0.4, 0.5))
    t = 0.37
    z_t = np.sqrt(sched.alpha_bar(t)) * mu
    out = den.predict(gd.DenoiserRequest(z_t, "anything", t))
    assert np.allclose(out, 0.0, atol=1e-15)


def test_analytic_sigma_zero_recovers_noise():
    sched = gd.NoiseSchedule()
    rng = np.random.default_rng(7)
    mu = rng.random((4, 4, 3))
    den = gd.AnalyticDenoiser(sched, targets={"p": gd.GaussianSpec(mu, 0.0)})
    for t in (0.1, 0.5, 0.9):
        eps = rng.normal(size=mu.shape)
        z_t = gd.add_noise(mu, eps, t, sched)
        out = den.predict(gd.DenoiserRequest(z_t, "p", t))
        assert np.allclose(out, eps, atol=1e-10)


def test_mixture_with_equal_means_collapses():
    sched = gd.NoiseSchedule()
    single = gd.GaussianSpec(0.3, 0.2)
    mix = gd.MixtureSpec(((0.4, gd.GaussianSpec(0.3, 0.2)),
                          (0.6, gd.GaussianSpec(0.3, 0.2))))
    den_s = gd.AnalyticDenoiser(sched, default=single)
    den_m = gd.AnalyticDenoiser(sched, default=mix)
    z_t = np.random.default_rng(8).normal(size=(3, 3, 3))
    req = gd.DenoiserRequest(z_t, "x", 0.5)
    assert np.allclose(den_s.predict(req), den_m.predict(req), atol=1e-12)


def test_gaussian_spec_rejects_negative_variance():
    with pytest.raises(gd.GuidanceConfigError):
        gd.GaussianSpec(0.5, -1.0)


def test_guidance_config_validation():
    with pytest.raises(gd.GuidanceConfigError):
        gd.GuidanceConfig(lam=1.0)
    with pytest.raises(gd.GuidanceConfigError):
        gd.GuidanceConfig(t_range=(0.9, 0.1))
    cfg = gd.GuidanceConfig(negative_prompts=("disfigured", "ugly", "bad hands"))
    assert cfg.negative_prompt == "disfigured, ugly, bad hands"


def test_sds_gradient_descent_converges():
    # Directly parameterized image, sigma^2=0, fixed t=0.5, plain gradient
    # descent at lr 1e-2; per-pixel RMS error drops below 1e-2 in 500 steps.
    sched = gd.NoiseSchedule(family="cosine")
    rng = np.random.default_rng(9)
    mu = np.full((8, 8, 3), 0.0)
    mu[..., 0] = 0.8
    mu[..., 1:] = 0.2
    den = gd.AnalyticDenoiser(sched, targets={"target": gd.GaussianSpec(mu, 0.0)})
    theta = np.full(mu.shape, 0.5)
    t, lr = 0.5, 1e-2
    for _ in range(500):
        eps = rng.normal(size=mu.shape)
        z = ad.tensor(theta, requires_grad=True)
        z_t = gd.add_noise(z, eps, t, sched)
        pred = den.predict(gd.DenoiserRequest(z_t.data, "target", t))
        seed = gd.sds_gradient(pred, eps, 1.0)
        z_t.backward(seed)
        theta = theta - lr * z.grad
    rms = np.sqrt(np.mean((theta - mu) ** 2))
    assert rms < 1e-2


def test_analytic_backend_cfg_path():
    sched = gd.NoiseSchedule()
    den = gd.AnalyticDenoiser(sched, targets={"p": gd.GaussianSpec(0.9, 0.0)},
                              default=gd.GaussianSpec(0.1, 0.0))
    backend = gd.AnalyticBackend(den)
    assert backend.embed("p") == "p"
    z_t = np.full((2, 2, 3), 0.5)
    raw = den.predict(gd.DenoiserRequest(z_t, "p", 0.5))
    guided = backend.predict(z_t, "p", 0.5, None, omega=2.0)
    uncond = den.predict(gd.DenoiserRequest(z_t, "p", 0.5, uncond=True))
    assert np.allclose(guided, 3.0 * raw - 2.0 * uncond, atol=1e-12)
