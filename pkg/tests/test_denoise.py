import numpy as np
import pytest

from vitalguard.denoise import (
    DiffusionDenoiser,
    WienerDenoiser,
    forward_sample,
    make_beta_schedule,
)
from vitalguard.errors import BadStep, ModelNotReady, NoData


def test_beta_schedule_alpha_bar_consistency():
    betas, alpha_bars = make_beta_schedule(100, 1e-4, 0.02)
    manual = np.cumprod(1.0 - betas)
    assert np.max(np.abs(alpha_bars - manual)) < 1e-12
    assert betas[0] == pytest.approx(1e-4) and betas[-1] == pytest.approx(0.02)
    # schedule covers a wide noise range but stays informative
    ratio = (1.0 - alpha_bars[-1]) / alpha_bars[-1]
    assert 1.0 < ratio < 3.0


def test_forward_sample_variance_identity():
    _, alpha_bars = make_beta_schedule(100, 1e-4, 0.02)
    rng = np.random.default_rng(0)
    t = 60
    n = 200_000
    xt, _ = forward_sample(alpha_bars, np.zeros(n), t, rng)
    var = xt.var()
    expect = 1.0 - alpha_bars[t]
    mc_sigma = expect * np.sqrt(2.0 / n)
    assert abs(var - expect) < 3 * mc_sigma


def test_forward_sample_rejects_bad_step():
    _, ab = make_beta_schedule(10, 1e-4, 0.02)
    with pytest.raises(BadStep):
        forward_sample(ab, np.zeros(3), 10, np.random.default_rng(0))


def test_fit_validations():
    with pytest.raises(NoData):
        DiffusionDenoiser().fit(np.empty((0, 2, 8)))
    with pytest.raises(ValueError):
        DiffusionDenoiser().fit(np.zeros((4, 8)))
    with pytest.raises(ModelNotReady):
        DiffusionDenoiser().transform(np.zeros((2, 8)))


def test_match_step_monotone(small_denoiser):
    d = small_denoiser
    assert d.match_step(0.0) == -1
    steps = [d.match_step(r) for r in (0.01, 0.1, 0.5, 1.0)]
    assert steps == sorted(steps)
    assert steps[-1] <= d.n_steps - 1


def test_transform_identity_without_noise_estimate(small_denoiser, windows):
    X = np.stack([w.data for w in windows[:3]])
    out = small_denoiser.transform(X)  # delta_est 0, no noise_sd
    np.testing.assert_array_equal(out, X)
    assert out is not X


def test_transform_preserves_window_mean(small_denoiser, windows):
    rng = np.random.default_rng(1)
    X = np.stack([w.data for w in windows[:4]])
    sd = 0.3 * np.abs(small_denoiser.channel_mean_)
    noisy = X + rng.normal(size=X.shape) * sd[None, :, None]
    out = small_denoiser.transform(noisy, noise_sd=sd)
    assert out.shape == noisy.shape
    np.testing.assert_allclose(out.mean(axis=-1), noisy.mean(axis=-1),
                               rtol=0, atol=1e-9)


def test_transform_reduces_mse(small_denoiser, windows):
    rng = np.random.default_rng(2)
    X = np.stack([w.data for w in windows[:16]])
    sd = 0.5 * np.abs(small_denoiser.channel_mean_)
    noisy = X + rng.normal(size=X.shape) * sd[None, :, None]
    out = small_denoiser.transform(noisy, noise_sd=sd)
    assert np.mean((out - X) ** 2) < np.mean((noisy - X) ** 2)


def test_denoiser_save_load_round_trip(tmp_path, small_denoiser, windows):
    path = tmp_path / "den.json"
    small_denoiser.save(path)
    back = DiffusionDenoiser.load(path)
    X = np.stack([w.data for w in windows[:2]])
    sd = 0.3 * np.abs(small_denoiser.channel_mean_)
    rng = np.random.default_rng(3)
    noisy = X + rng.normal(size=X.shape) * sd[None, :, None]
    np.testing.assert_array_equal(back.transform(noisy, noise_sd=sd),
                                  small_denoiser.transform(noisy, noise_sd=sd))


def test_wiener_gain_bounds(wiener):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(3, 2, 40))
    gain = wiener.wiener_gain(X, noise_var=0.5)
    assert (gain >= 0).all() and (gain <= 1).all()


def test_wiener_reduces_noise_on_smooth_signal(wiener):
    t = np.linspace(0, 4 * np.pi, 400)
    clean = np.stack([np.sin(t), np.cos(t / 2)])
    rng = np.random.default_rng(5)
    noisy = clean + rng.normal(0, 0.4, clean.shape)
    out = wiener.transform(noisy, noise_var=0.16)
    assert np.mean((out - clean) ** 2) < np.mean((noisy - clean) ** 2)


def test_wiener_estimated_mode_and_validation():
    w = WienerDenoiser(local_window=4)
    with pytest.raises(ValueError):
        w.fit()
    w = WienerDenoiser()
    out = w.transform(np.random.default_rng(6).normal(size=(2, 30)))
    assert out.shape == (2, 30)
    with pytest.raises(ValueError):
        w.transform(np.zeros((2, 10)), noise_var="bogus")


def test_wiener_zero_noise_passthrough(wiener):
    X = np.random.default_rng(7).normal(size=(2, 50))
    out = wiener.transform(X, noise_var=0.0)
    np.testing.assert_allclose(out, X, atol=1e-12)
