"""Bayes-optimal classifiers for both generative laws, plus the generic
linear classifier they are compared against.

For the mixture law the Bayes rule is sign(phi^-1(x)^T (W W^T)^+ W mu - q/2)
with q = log((1 - pi) / pi); for the GLM law it is
sign(f(beta^T (W^T W)^-1 W^T phi^-1(x)) - 1/2), which for monotone f is a
linear threshold on the pulled-back features. Both directions are computed
through one thin SVD of W. Ties resolve to +1 everywhere.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .models import FeatureMap, link_function
from .numerics import svd


def sign_pm1(t):
    """Sign with the fixed tie rule sign(0) = +1, returning +-1 ints."""
    t = np.asarray(t)
    return np.where(t >= 0, 1, -1)


@dataclass(frozen=True)
class LinearClassifier:
    """h(x) = sign(x^T theta)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 1:
            raise ValueError("theta must be a vector")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta has non-finite entries")
        if not np.any(theta):
            raise ValueError("theta must not be the zero vector")

    def score(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.theta.shape[0]:
            raise ValueError(
                "dimension mismatch: x has %d features, theta has %d"
                % (x.shape[-1], self.theta.shape[0])
            )
        return x @ self.theta


def classify_linear(c, x):
    """Label(s) sign(x^T theta); x may be a vector or an (n, d) batch."""
    return sign_pm1(c.score(x))


@dataclass(frozen=True)
class BayesGmmClassifier:
    """Bayes rule for the mixture law: sign(phi^-1(x)^T direction - threshold).

    direction = (W W^T)^+ W mu lies in the column space of W;
    threshold = q / 2 with q = log((1 - pi) / pi).
    """

    direction: np.ndarray
    threshold: float
    phi: FeatureMap

    def score(self, x):
        u = self.phi.inverse(np.asarray(x, dtype=np.float64))
        return u @ self.direction - self.threshold

    def classify(self, x):
        return sign_pm1(self.score(x))


@dataclass(frozen=True)
class BayesGlmClassifier:
    """Bayes rule for the GLM law as a linear threshold on phi^-1(x).

    direction = W (W^T W)^-1 beta; threshold = f^-1(1/2), which is 0 for
    the logistic and probit links.
    """

    direction: np.ndarray
    threshold: float
    phi: FeatureMap

    def score(self, x):
        u = self.phi.inverse(np.asarray(x, dtype=np.float64))
        return u @ self.direction - self.threshold

    def classify(self, x):
        return sign_pm1(self.score(x))


def _pinv_transpose_apply(W, v):
    # (W^+)^T v computed from the thin SVD; equals both (W W^T)^+ W v and
    # W (W^T W)^-1 v when W has full column rank.
    res = svd(W)
    r = res.numerical_rank
    u = res.U[:, :r]
    s = res.singular_values[:r]
    vv = res.V[:, :r]
    return u @ ((vv.T @ v) / s)


def bayes_gmm(model):
    """Construct the Bayes-optimal classifier of a LatentGMM."""
    direction = _pinv_transpose_apply(model.W, model.mu)
    q = np.log((1.0 - model.pi) / model.pi)
    return BayesGmmClassifier(direction=direction, threshold=q / 2.0, phi=model.phi)


def bayes_glm(model):
    """Construct the Bayes-optimal classifier of a LatentGLM."""
    link_function(model.link)  # validates; both links have f^-1(1/2) = 0
    direction = _pinv_transpose_apply(model.W, model.beta)
    return BayesGlmClassifier(direction=direction, threshold=0.0, phi=model.phi)


def gmm_posterior(model, x):
    """P(y = +1 | x) for a LatentGMM, computed in log-odds space.

    The log odds are t = 2 phi^-1(x)^T Sigma^+ mu~ - q with Sigma = W W^T
    and mu~ = W mu; Sigma^+ mu~ is exactly the Bayes direction, so the
    classifier and this posterior share one linear functional.
    """
    clf = bayes_gmm(model)
    u = model.phi.inverse(np.asarray(x, dtype=np.float64))
    q = np.log((1.0 - model.pi) / model.pi)
    t = 2.0 * (u @ clf.direction) - q
    return expit(t)
