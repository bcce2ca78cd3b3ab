"""Feature maps, latent-variable samplers, and model serialization."""

import json

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm
from scipy.special import expit

from manifoldrisk import models

# P(sign(t) matches a label drawn with probability expit(t)), t ~ N(0, 100);
# adaptive quadrature of 2 phi_10(t) expit(t) on [0, inf), abs err < 1e-9
SIGN_RULE_AGREEMENT_SCALE10 = 0.9453920255749472


def grid():
    return np.linspace(-10.0, 10.0, 4001)


@pytest.mark.parametrize("name", ["identity", "leaky_abs", "sign_quadratic"])
def test_feature_map_round_trip(name):
    phi = models.get_feature_map(name)
    t = grid()
    assert np.allclose(phi.inverse(phi.forward(t)), t, atol=1e-9)
    assert np.allclose(phi.forward(phi.inverse(t)), t, atol=1e-9)


@pytest.mark.parametrize("name", ["identity", "leaky_abs", "sign_quadratic"])
def test_feature_map_slope_bounded_below(name):
    # strictly increasing with derivative >= c, checked by finite differences
    phi = models.get_feature_map(name)
    t = grid()
    f = phi.forward(t)
    slopes = np.diff(f) / np.diff(t)
    assert np.all(slopes >= phi.c - 1e-4)


def test_leakyabs_values():
    phi = models.get_feature_map("leaky_abs")
    assert phi.c == 0.25
    assert phi.forward(np.array([2.0]))[0] == 2.0
    assert phi.forward(np.array([-2.0]))[0] == -0.5
    assert phi.inverse(np.array([-0.5]))[0] == -2.0
    assert phi.inverse_derivative(np.array([-1.0]))[0] == 4.0
    assert phi.inverse_derivative(np.array([1.0]))[0] == 1.0


def test_signquadratic_values():
    phi = models.get_feature_map("sign_quadratic")
    assert phi.c == 1.0
    assert phi.forward(np.array([2.0]))[0] == pytest.approx(6.0)
    assert phi.forward(np.array([-2.0]))[0] == pytest.approx(-6.0)
    assert phi.inverse(np.array([6.0]))[0] == pytest.approx(2.0)
    # d/dy inverse at y = phi(t) is 1/(1 + 2|t|)
    assert phi.inverse_derivative(np.array([6.0]))[0] == pytest.approx(0.2)


def test_tanh_domain_and_round_trip():
    phi = models.get_feature_map("tanh")
    assert phi.c is None
    t = np.linspace(-5, 5, 101)
    assert np.allclose(phi.inverse(phi.forward(t)), t, atol=1e-6)
    with pytest.raises(ValueError):
        phi.inverse(np.array([1.0]))
    with pytest.raises(ValueError):
        phi.inverse(np.array([-1.5]))


def test_get_feature_map_unknown():
    with pytest.raises(ValueError):
        models.get_feature_map("relu")


def test_link_function_values():
    logistic = models.link_function("logistic")
    probit = models.link_function("probit")
    assert logistic(0.0) == pytest.approx(0.5)
    assert probit(0.0) == pytest.approx(0.5)
    assert logistic(3.0) == pytest.approx(expit(3.0))
    assert probit(1.0) == pytest.approx(norm.cdf(1.0))
    with pytest.raises(ValueError):
        models.link_function("cauchit")


def test_latent_gmm_validation():
    rng = np.random.default_rng(0)
    W = rng.standard_normal((5, 2))
    mu = np.ones(2)
    models.LatentGMM(W=W, mu=mu, pi=0.5, phi=models.Identity())
    W_bad = np.zeros((5, 2))
    W_bad[:, 0] = 1.0                  # rank 1 < k = 2
    with pytest.raises(ValueError):
        models.LatentGMM(W=W_bad, mu=mu, pi=0.5, phi=models.Identity())
    with pytest.raises(ValueError):
        models.LatentGMM(W=W, mu=mu, pi=0.0, phi=models.Identity())
    with pytest.raises(ValueError):
        models.LatentGMM(W=W, mu=np.ones(3), pi=0.5, phi=models.Identity())


def test_sample_gmm_statistics():
    rng = np.random.default_rng(1)
    model = models.random_gmm(6, 2, rng, pi=0.7)
    n = 40000
    batch = models.sample_gmm(model, n, rng, keep_latent=True)
    assert batch.x.shape == (n, 6)
    assert set(np.unique(batch.y)) <= {-1, 1}
    p_hat = np.mean(batch.y == 1)
    se = np.sqrt(0.7 * 0.3 / n)
    assert abs(p_hat - 0.7) <= 4 * se
    # conditional latent means sit at y * mu
    for y in (-1, 1):
        z_mean = batch.z[batch.y == y].mean(axis=0)
        assert np.allclose(z_mean, y * model.mu, atol=4 / np.sqrt(n / 4))
    # x is exactly phi(W z)
    assert np.allclose(batch.x, model.phi.forward(batch.z @ model.W.T))


def test_sample_glm_label_law():
    rng = np.random.default_rng(2)
    model = models.random_glm(5, 3, rng)
    n = 40000
    batch = models.sample_glm(model, n, rng, keep_latent=True)
    link = models.link_function(model.link)
    probs = link(batch.z @ model.beta)
    p_hat = np.mean(batch.y == 1)
    p_true = probs.mean()
    assert abs(p_hat - p_true) <= 4 * np.sqrt(0.25 / n)
    assert np.allclose(batch.x, model.phi.forward(batch.z @ model.W.T))


def test_glm_sign_rule_agreement_oracle():
    """Labels agree with sign(beta^T z) at the quadrature-oracle rate when
    ||beta|| = 10 (d = k = 1 reduces the law to the scalar case)."""
    rng = np.random.default_rng(3)
    model = models.LatentGLM(W=np.array([[1.0]]), beta=np.array([10.0]),
                             link="logistic", phi=models.Identity())
    n = 200000
    batch = models.sample_glm(model, n, rng, keep_latent=True)
    agree = np.mean(batch.y == np.where(batch.z @ model.beta >= 0, 1, -1))
    se = np.sqrt(SIGN_RULE_AGREEMENT_SCALE10
                 * (1 - SIGN_RULE_AGREEMENT_SCALE10) / n)
    assert abs(agree - SIGN_RULE_AGREEMENT_SCALE10) <= 5 * se


def test_sign_rule_agreement_oracle_self_check():
    # keep the frozen constant honest against a fresh quadrature
    f = lambda t: 2 * norm.pdf(t, scale=10.0) * expit(t)
    val, err = quad(f, 0, np.inf, limit=200)
    assert err < 1e-8
    assert val == pytest.approx(SIGN_RULE_AGREEMENT_SCALE10, abs=1e-9)


def test_sampling_deterministic_under_seed():
    rng = np.random.default_rng(4)
    model = models.random_gmm(4, 2, rng)
    a = models.sample_gmm(model, 50, np.random.default_rng(11))
    b = models.sample_gmm(model, 50, np.random.default_rng(11))
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.y, b.y)


def test_batch_iteration():
    rng = np.random.default_rng(5)
    model = models.random_gmm(3, 1, rng)
    batch = models.sample_gmm(model, 7, rng)
    assert len(batch) == 7
    samples = list(batch)
    assert len(samples) == 7
    assert np.array_equal(samples[0].x, batch.x[0])
    assert samples[0].y == batch.y[0]


def test_gmm_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    model = models.random_gmm(5, 2, rng, pi=0.3,
                              phi=models.get_feature_map("leaky_abs"))
    path = tmp_path / "model.json"
    models.save_gmm(model, path)
    with open(path) as f:
        payload = json.load(f)
    assert set(payload) == {"d", "k", "pi", "phi", "W", "mu"}
    back = models.load_gmm(path)
    assert np.array_equal(back.W, model.W)
    assert np.array_equal(back.mu, model.mu)
    assert back.pi == model.pi
    assert back.phi.name == "leaky_abs"


def test_glm_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    model = models.random_glm(4, 2, rng, link="probit")
    path = tmp_path / "model.json"
    models.save_glm(model, path)
    with open(path) as f:
        payload = json.load(f)
    assert set(payload) == {"d", "k", "phi", "W", "beta", "link"}
    back = models.load_glm(path)
    assert np.array_equal(back.W, model.W)
    assert np.array_equal(back.beta, model.beta)
    assert back.link == "probit"


def test_load_rejects_inconsistent_dimensions(tmp_path):
    rng = np.random.default_rng(8)
    model = models.random_gmm(4, 2, rng)
    path = tmp_path / "model.json"
    models.save_gmm(model, path)
    with open(path) as f:
        payload = json.load(f)
    payload["k"] = 3
    with open(path, "w") as f:
        json.dump(payload, f)
    with pytest.raises(ValueError):
        models.load_gmm(path)


def test_random_gmm_sphere_rows_unit_norm():
    rng = np.random.default_rng(9)
    model = models.random_gmm_sphere_rows(20, 3, rng)
    norms = np.linalg.norm(model.W, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-12)
