"""Latent-manifold data generators and the entrywise feature maps.

Two generative laws over x in R^d with latent z in R^k, k <= d:

* Gaussian mixture: y = +1 w.p. pi else -1, z ~ N(y mu, I_k), x = phi(W z).
* Latent GLM: z ~ N(0, I_k), P(y = +1 | z) = f(z^T beta), x = phi(W z).

W is d x k with full column rank, phi acts entrywise and is strictly
increasing. Feature maps carry their inverse and, where one exists, a
global derivative lower bound c used by the certificate machinery.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .numerics import svd


class FeatureMap:
    """Entrywise strictly increasing map with inverse.

    Attributes
    ----------
    name : str
        Registry key, also the serialization tag.
    c : float or None
        Global lower bound on the derivative, None if no positive bound
        exists (tanh). Maps with c=None are admitted for sampling and
        empirical evaluation only; theoretical bounds reject them.
    """

    name = "abstract"
    c = None

    def forward(self, t):
        raise NotImplementedError

    def inverse(self, t):
        raise NotImplementedError

    def inverse_derivative(self, t):
        """d/dt of the inverse, evaluated entrywise at t (range side)."""
        raise NotImplementedError

    def __repr__(self):
        return "FeatureMap(%s)" % self.name


class Identity(FeatureMap):
    name = "identity"
    c = 1.0

    def forward(self, t):
        return np.asarray(t, dtype=np.float64)

    def inverse(self, t):
        return np.asarray(t, dtype=np.float64)

    def inverse_derivative(self, t):
        return np.ones_like(np.asarray(t, dtype=np.float64))


class LeakyAbs(FeatureMap):
    """Piecewise-linear leaky map: t for t >= 0, t/4 for t < 0. c = 1/4."""

    name = "leaky_abs"
    c = 0.25

    def forward(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(t >= 0, t, 0.25 * t)

    def inverse(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(t >= 0, t, 4.0 * t)

    def inverse_derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(t >= 0, 1.0, 4.0)


class SignQuadratic(FeatureMap):
    """phi(t) = t + sign(t) t^2; superlinear, C^1, with derivative >= 1."""

    name = "sign_quadratic"
    c = 1.0

    def forward(self, t):
        t = np.asarray(t, dtype=np.float64)
        return t + np.sign(t) * t * t

    def inverse(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.sign(t) * (np.sqrt(1.0 + 4.0 * np.abs(t)) - 1.0) / 2.0

    def inverse_derivative(self, t):
        t = np.asarray(t, dtype=np.float64)
        return 1.0 / np.sqrt(1.0 + 4.0 * np.abs(t))


class Tanh(FeatureMap):
    """tanh; no positive global derivative bound, so certificate-side
    machinery rejects it. Inverse clamps to +-(1 - 1e-12); entries at or
    beyond +-1 are a domain error."""

    name = "tanh"
    c = None
    _CLAMP = 1.0 - 1e-12

    def forward(self, t):
        return np.tanh(np.asarray(t, dtype=np.float64))

    def inverse(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(np.abs(t) >= 1.0):
            raise ValueError("tanh inverse needs entries strictly inside (-1, 1)")
        return np.arctanh(np.clip(t, -self._CLAMP, self._CLAMP))

    def inverse_derivative(self, t):
        t = np.clip(np.asarray(t, dtype=np.float64), -self._CLAMP, self._CLAMP)
        return 1.0 / (1.0 - t * t)


_MAPS = {m.name: m() for m in (Identity, LeakyAbs, SignQuadratic, Tanh)}


def get_feature_map(name):
    """Look up a feature map by its registry name."""
    try:
        return _MAPS[name]
    except KeyError:
        raise ValueError(
            "unknown feature map %r (have %s)" % (name, sorted(_MAPS))
        ) from None


# Link functions for the GLM law; both satisfy f(0) = 1/2.
_LINKS = {"logistic": expit, "probit": ndtr}


def link_function(name):
    try:
        return _LINKS[name]
    except KeyError:
        raise ValueError("unknown link %r (have %s)" % (name, sorted(_LINKS))) from None


def _check_lifting(W, k):
    res = svd(W)
    if res.numerical_rank != k:
        raise ValueError(
            "W must have full column rank %d, numerical rank is %d"
            % (k, res.numerical_rank)
        )
    return res


@dataclass(frozen=True)
class LatentGMM:
    """Gaussian-mixture law x = phi(W z), z ~ N(y mu, I_k).

    Parameters
    ----------
    W : (d, k) ndarray, full column rank
    mu : (k,) ndarray
    pi : float in (0, 1), probability of the +1 class
    phi : FeatureMap
    """

    W: np.ndarray
    mu: np.ndarray
    pi: float
    phi: FeatureMap = field(default_factory=Identity)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "mu", mu)
        if W.ndim != 2:
            raise ValueError("W must be 2-d")
        d, k = W.shape
        if mu.shape != (k,):
            raise ValueError("mu must have shape (%d,), got %r" % (k, mu.shape))
        if not (0.0 < self.pi < 1.0):
            raise ValueError("pi must lie strictly inside (0, 1)")
        _check_lifting(W, k)

    @property
    def d(self):
        return self.W.shape[0]

    @property
    def k(self):
        return self.W.shape[1]


@dataclass(frozen=True)
class LatentGLM:
    """GLM law x = phi(W z), z ~ N(0, I_k), P(y=+1|z) = f(z^T beta)."""

    W: np.ndarray
    beta: np.ndarray
    link: str = "logistic"
    phi: FeatureMap = field(default_factory=Identity)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "beta", beta)
        if W.ndim != 2:
            raise ValueError("W must be 2-d")
        d, k = W.shape
        if beta.shape != (k,):
            raise ValueError("beta must have shape (%d,), got %r" % (k, beta.shape))
        link_function(self.link)
        _check_lifting(W, k)

    @property
    def d(self):
        return self.W.shape[0]

    @property
    def k(self):
        return self.W.shape[1]


@dataclass(frozen=True)
class LabeledSample:
    """Single observation; z is retained only when sampling asked for it."""

    x: np.ndarray
    y: int
    z: np.ndarray = None


@dataclass(frozen=True)
class SampleBatch:
    """Array-of-structs sample container.

    x is (n, d), y is (n,) with entries +-1, z is (n, k) or None. The
    batch form is what the Monte Carlo estimators consume; iterate for
    per-sample records.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray = None

    def __len__(self):
        return self.x.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            zi = None if self.z is None else self.z[i]
            yield LabeledSample(x=self.x[i], y=int(self.y[i]), z=zi)


def sample_gmm(model, n, rng, keep_latent=False):
    """Draw n labeled samples from a LatentGMM.

    Parameters
    ----------
    model : LatentGMM
    n : int, >= 1
    rng : numpy Generator
    keep_latent : bool
        Retain z in the batch (k floats per sample) for diagnostics.

    Returns
    -------
    SampleBatch
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    y = np.where(rng.random(n) < model.pi, 1, -1)
    z = y[:, None] * model.mu + rng.standard_normal((n, model.k))
    x = model.phi.forward(z @ model.W.T)
    return SampleBatch(x=x, y=y, z=z if keep_latent else None)


def sample_glm(model, n, rng, keep_latent=False):
    """Draw n labeled samples from a LatentGLM."""
    if n < 1:
        raise ValueError("n must be >= 1")
    f = link_function(model.link)
    z = rng.standard_normal((n, model.k))
    p = f(z @ model.beta)
    y = np.where(rng.random(n) < p, 1, -1)
    x = model.phi.forward(z @ model.W.T)
    return SampleBatch(x=x, y=y, z=z if keep_latent else None)


def random_gmm(d, k, rng, pi=0.5, phi=None):
    """GMM instance with the experimental construction: W entries
    N(0, 1/k), mu ~ N(0, I_k / k)."""
    W = rng.standard_normal((d, k)) / np.sqrt(k)
    mu = rng.standard_normal(k) / np.sqrt(k)
    return LatentGMM(W=W, mu=mu, pi=pi, phi=phi or Identity())


def random_glm(d, k, rng, link="logistic", phi=None):
    """GLM instance with W and beta entries i.i.d. N(0, 1/k)."""
    W = rng.standard_normal((d, k)) / np.sqrt(k)
    beta = rng.standard_normal(k) / np.sqrt(k)
    return LatentGLM(W=W, beta=beta, link=link, phi=phi or Identity())


def random_gmm_sphere_rows(d, k, rng, pi=0.5):
    """GMM whose W rows are uniform on the unit sphere in R^k (the
    single-coordinate-classifier construction)."""
    rows = rng.standard_normal((d, k))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    mu = rng.standard_normal(k) / np.sqrt(k)
    return LatentGMM(W=rows, mu=mu, pi=pi, phi=Identity())


def save_gmm(model, path):
    """Serialize a LatentGMM to a JSON text file."""
    payload = {
        "d": model.d,
        "k": model.k,
        "pi": model.pi,
        "phi": model.phi.name,
        "W": model.W.tolist(),
        "mu": model.mu.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_gmm(path):
    with open(path) as f:
        payload = json.load(f)
    model = LatentGMM(
        W=np.asarray(payload["W"], dtype=np.float64),
        mu=np.asarray(payload["mu"], dtype=np.float64),
        pi=float(payload["pi"]),
        phi=get_feature_map(payload["phi"]),
    )
    if model.d != payload["d"] or model.k != payload["k"]:
        raise ValueError("stored dimensions disagree with the W matrix")
    return model


def save_glm(model, path):
    payload = {
        "d": model.d,
        "k": model.k,
        "phi": model.phi.name,
        "link": model.link,
        "W": model.W.tolist(),
        "beta": model.beta.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_glm(path):
    with open(path) as f:
        payload = json.load(f)
    model = LatentGLM(
        W=np.asarray(payload["W"], dtype=np.float64),
        beta=np.asarray(payload["beta"], dtype=np.float64),
        link=payload["link"],
        phi=get_feature_map(payload["phi"]),
    )
    if model.d != payload["d"] or model.k != payload["k"]:
        raise ValueError("stored dimensions disagree with the W matrix")
    return model
