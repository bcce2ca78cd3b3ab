"""Decision rules: sign convention, pulled-back Bayes scores, posterior."""

import numpy as np
import pytest
from scipy.special import expit

from manifoldrisk import classifiers, models
from manifoldrisk.risk import AdversaryBudget, linear_gmm_risks_closed


def test_sign_convention_ties_positive():
    out = classifiers.sign_pm1(np.array([-1.0, 0.0, 1e-300, 2.0]))
    assert np.array_equal(out, [-1, 1, 1, 1])


def test_linear_classifier_validation():
    with pytest.raises(ValueError):
        classifiers.LinearClassifier(np.zeros(3))
    with pytest.raises(ValueError):
        classifiers.LinearClassifier(np.array([1.0, np.nan]))
    clf = classifiers.LinearClassifier(np.array([1.0, -2.0]))
    with pytest.raises(ValueError):
        clf.score(np.ones((4, 3)))
    assert np.allclose(clf.score(np.array([[1.0, 1.0]])), [-1.0])


def test_bayes_gmm_pulled_back_score():
    """On identity-phi data the ambient score reduces exactly to the
    latent score z^T mu - q/2."""
    rng = np.random.default_rng(0)
    for pi in (0.5, 0.75):
        model = models.random_gmm(12, 3, rng, pi=pi)
        clf = classifiers.bayes_gmm(model)
        batch = models.sample_gmm(model, 200, rng, keep_latent=True)
        q = np.log((1 - pi) / pi)
        want = batch.z @ model.mu - q / 2
        assert np.allclose(clf.score(batch.x), want, atol=1e-9)


def test_bayes_gmm_threshold_value():
    rng = np.random.default_rng(1)
    model = models.random_gmm(6, 2, rng, pi=0.75)
    clf = classifiers.bayes_gmm(model)
    # q/2 = log((1-pi)/pi)/2 = -log(3)/2
    assert clf.threshold == pytest.approx(-0.5493061443340549, abs=1e-12)


def test_bayes_gmm_nonlinear_phi_score():
    rng = np.random.default_rng(2)
    phi = models.get_feature_map("sign_quadratic")
    model = models.random_gmm(8, 2, rng, phi=phi)
    clf = classifiers.bayes_gmm(model)
    batch = models.sample_gmm(model, 200, rng, keep_latent=True)
    want = batch.z @ model.mu          # pi = 1/2, threshold 0
    assert np.allclose(clf.score(batch.x), want, atol=1e-8)


def test_bayes_gmm_beats_random_linear_rules():
    """Bayes optimality on a small instance, judged by the closed form."""
    rng = np.random.default_rng(3)
    model = models.random_gmm(3, 2, rng, pi=0.6)
    budget = AdversaryBudget(p=2.0, epsilon=0.0)
    bayes = classifiers.bayes_gmm(model)
    bayes_sr = linear_gmm_risks_closed(model, bayes, budget).sr
    for _ in range(200):
        theta = rng.standard_normal(3)
        b = rng.standard_normal() * 0.5
        sr = linear_gmm_risks_closed(model, (theta, b), budget).sr
        assert bayes_sr <= sr + 1e-12


def test_gmm_posterior_matches_classifier():
    rng = np.random.default_rng(4)
    model = models.random_gmm(5, 2, rng, pi=0.3)
    clf = classifiers.bayes_gmm(model)
    batch = models.sample_gmm(model, 500, rng)
    post = classifiers.gmm_posterior(model, batch.x)
    assert post.shape == (500,)
    assert np.all((post >= 0) & (post <= 1))
    # sign(posterior - 1/2) is the classifier, ties going positive
    assert np.array_equal(np.where(post >= 0.5, 1, -1), clf.classify(batch.x))


def test_posterior_expit_identity_on_score_grid():
    # P(y=+1|x) = expit(2 * (score + threshold) - q) for scores far into
    # both tails
    rng = np.random.default_rng(5)
    pi = 0.65
    model = models.random_gmm(4, 1, rng, pi=pi)
    clf = classifiers.bayes_gmm(model)
    q = np.log((1 - pi) / pi)
    # walk x along the direction to sweep the score over [-50, 50]
    direction = clf.direction / np.linalg.norm(clf.direction) ** 2
    scores = np.linspace(-50, 50, 41)
    x = np.outer(scores + clf.threshold, direction)
    post = classifiers.gmm_posterior(model, x)
    want = expit(2 * (scores + clf.threshold) - q)
    assert np.allclose(post, want, atol=1e-12)


def test_bayes_glm_pulled_back_score():
    rng = np.random.default_rng(6)
    for link in ("logistic", "probit"):
        model = models.random_glm(10, 3, rng, link=link)
        clf = classifiers.bayes_glm(model)
        assert clf.threshold == 0.0
        batch = models.sample_glm(model, 300, rng, keep_latent=True)
        want = batch.z @ model.beta
        assert np.allclose(clf.score(batch.x), want, atol=1e-9)


def test_bayes_glm_direction_formula():
    rng = np.random.default_rng(7)
    model = models.random_glm(9, 4, rng)
    clf = classifiers.bayes_glm(model)
    W = model.W
    # for full column rank the pseudo-inverse transpose equals W (W^T W)^-1
    want = W @ np.linalg.solve(W.T @ W, model.beta)
    assert np.allclose(clf.direction, want, atol=1e-9)


def test_classify_batch_and_single_row():
    rng = np.random.default_rng(8)
    model = models.random_gmm(4, 2, rng)
    clf = classifiers.bayes_gmm(model)
    batch = models.sample_gmm(model, 10, rng)
    labels = clf.classify(batch.x)
    assert labels.shape == (10,)
    one = clf.classify(batch.x[0])
    assert one == labels[0]
