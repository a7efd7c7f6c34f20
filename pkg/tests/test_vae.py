import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabbias.diffcore import autodiff as ad
from tabbias.diffcore import grad_check
from tabbias.gmm import GmmModel
from tabbias.schema import EncodedMatrix, Group
from tabbias.vae import (
    VaeArchitecture,
    VaeConfig,
    decoder_outputs,
    elbo_loss,
    fit_latent_gmm,
    gaussian_kl,
    generate,
    load_vae,
    make_loss_fn,
    reconstruction_nll,
    save_vae,
    softmax,
    train_vae,
)

MIXED = (
    Group("a", 0, 1, "continuous"),
    Group("a", 1, 2, "missing"),
    Group("c", 2, 5, "categorical"),
    Group("b", 5, 6, "continuous"),
)


def _mixed_batch(n, seed):
    rng = np.random.default_rng(seed)
    x = np.zeros((n, 6))
    x[:, 0] = rng.normal(size=n)
    x[:, 1] = rng.random(n) < 0.2
    x[np.arange(n), 2 + rng.integers(3, size=n)] = 1.0
    x[:, 5] = rng.normal(size=n)
    return x


def test_kl_is_zero_for_standard_posterior():
    mu = ad.Tensor(np.zeros((3, 4)))
    np.testing.assert_array_equal(gaussian_kl(mu, mu).data, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_kl_is_nonnegative(mu, logvar):
    kl = gaussian_kl(ad.Tensor(np.array([mu])), ad.Tensor(np.array([logvar]))).data
    assert kl[0] >= -1e-12


def test_gaussian_nll_at_mean():
    g = (Group("x", 0, 1, "continuous"),)
    arch = VaeArchitecture(g, VaeConfig(latent_dim=1, hidden_size=2, depth=1))
    x = np.array([[0.3], [-1.2]])
    params = {"dec.logvar": ad.Tensor(np.zeros(1))}
    nll = reconstruction_nll(arch, params, ad.Tensor(x.copy()), x).data
    np.testing.assert_allclose(nll, 0.5 * math.log(2 * math.pi))


def test_categorical_ce_matches_log_softmax():
    g = (Group("c", 0, 3, "categorical"),)
    arch = VaeArchitecture(g, VaeConfig(latent_dim=1, hidden_size=2, depth=1))
    logits = np.array([[1.0, 2.0, 0.5]])
    x = np.array([[0.0, 0.0, 1.0]])
    nll = reconstruction_nll(arch, {}, ad.Tensor(logits), x).data
    assert nll[0] == pytest.approx(-np.log(softmax(logits)[0, 2]), rel=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_elbo_gradient_matches_finite_differences(seed):
    cfg = VaeConfig(latent_dim=2, hidden_size=5, depth=1, hidden_activation="tanh")
    arch = VaeArchitecture(MIXED, cfg)
    params = arch.init(seed)
    x = _mixed_batch(7, seed)
    noise = np.random.default_rng(seed + 10).normal(size=(7, 2))
    rep = grad_check(make_loss_fn(arch), params, (x, noise), tolerance=1e-3, n_coords=20, seed=seed)
    assert rep.ok, rep.rel_errors


def test_elbo_loss_shape_checks():
    arch = VaeArchitecture(MIXED, VaeConfig(latent_dim=2, hidden_size=4, depth=1))
    p = arch.init(0)
    with pytest.raises(ValueError):
        elbo_loss(arch, p, np.zeros((3, 5)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        elbo_loss(arch, p, np.zeros((3, 6)), np.zeros((3, 3)))
    assert np.isfinite(elbo_loss(arch, p, _mixed_batch(3, 0), np.zeros((3, 2))))


def test_training_contract(toy_small, tiny_config):
    m = train_vae(toy_small, tiny_config, seed=3)
    vals = m.val_curve
    assert m.best_val_loss == min(vals) <= vals[0]
    again = train_vae(toy_small, tiny_config, seed=3)
    assert again.params == m.params
    same = train_vae(toy_small, tiny_config.replace(max_epochs=0), seed=1, init=m.params)
    assert same.params == m.params


def test_incompatible_init_rejected(toy_small, tiny_config):
    other = VaeArchitecture(toy_small.group_map, tiny_config.replace(hidden_size=9)).init(0)
    with pytest.raises(ValueError):
        train_vae(toy_small, tiny_config, seed=0, init=other)


@pytest.fixture(scope="module")
def correlated_model():
    rho = 0.8
    x = np.random.default_rng(0).multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=2000)
    groups = (Group("u", 0, 1, "continuous"), Group("v", 1, 2, "continuous"))
    cfg = VaeConfig(latent_dim=2, hidden_size=32, depth=2, max_epochs=300, patience=30, gmm_components=3)
    data = EncodedMatrix(x, groups)
    model = train_vae(data, cfg, seed=1)
    return model, fit_latent_gmm(model, data, seed=1)


def test_correlated_gaussian_is_learned_with_sampled_noise(correlated_model):
    model, gmm = correlated_model
    model = dataclasses.replace(model, config=model.config.replace(continuous_output="sample"))
    synth = generate(model, gmm, 5000, seed=2).values
    r = np.corrcoef(synth.T)[0, 1]
    assert abs(r - 0.8) <= 0.15, r


def test_decoder_means_concentrate_on_a_curve(correlated_model):
    # the fit explains one direction by a latent and the rest by observation
    # noise, so noiseless decoder means are almost perfectly correlated
    model, gmm = correlated_model
    r = np.corrcoef(generate(model, gmm, 5000, seed=2).values.T)[0, 1]
    assert r > 0.95


def test_generation_contract_and_category_frequencies(toy_encoded, tiny_config):
    model = train_vae(toy_encoded.take(np.arange(400)), tiny_config, seed=0)
    gmm = fit_latent_gmm(model, toy_encoded.take(np.arange(400)), seed=0)
    a = generate(model, gmm, 10_000, seed=5)
    b = generate(model, gmm, 10_000, seed=5)
    assert a.n_rows == 10_000
    np.testing.assert_array_equal(a.values, b.values)
    # reproduce the same latent draws to get the decoder probabilities
    z = gmm.sample(10_000, np.random.default_rng(5))
    out = decoder_outputs(model, z)
    for g in model.group_map:
        if g.kind != "categorical":
            continue
        block = a.values[:, g.start : g.stop]
        np.testing.assert_array_equal(block.sum(axis=1), 1.0)
        probs = softmax(out[:, g.start : g.stop]).mean(axis=0)
        assert np.max(np.abs(block.mean(axis=0) - probs)) <= 0.03


def test_latent_gmm_k1_equals_moments(toy_small, tiny_config):
    from tabbias.vae import posterior_means

    model = train_vae(toy_small, tiny_config, seed=0)
    g = fit_latent_gmm(model, toy_small, k=1)
    mu = posterior_means(model, toy_small)
    np.testing.assert_allclose(g.means[0], mu.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(g.covariances[0], np.cov(mu.T, bias=True), atol=1e-9)


def test_save_and_load(tmp_path, toy_small, tiny_config):
    model = train_vae(toy_small, tiny_config, seed=0)
    gmm = fit_latent_gmm(model, toy_small, seed=0)
    save_vae(model, gmm, tmp_path / "m")
    m2, g2 = load_vae(tmp_path / "m")
    assert m2.params == model.params and m2.config == model.config
    assert isinstance(g2, GmmModel)
    np.testing.assert_array_equal(generate(m2, g2, 50, 1).values, generate(model, gmm, 50, 1).values)


@pytest.mark.parametrize("bad", [dict(latent_dim=0), dict(val_fraction=1.0), dict(max_epochs=10, patience=10), dict(continuous_output="median")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        VaeConfig(**bad)
