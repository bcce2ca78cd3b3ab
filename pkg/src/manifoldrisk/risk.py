"""Standard, adversarial, and boundary risk, plus the theoretical bounds.

Definitions: SR is the probability of misclassifying a clean sample, AR the
probability that some perturbation within the adversary's norm ball causes
a misclassification, and BR = AR - SR. Closed forms exist on the mixture
law for classifiers whose decision is linear in x; elsewhere the estimators
are Monte Carlo with per-sample verdicts that are either exact (linear
decisions, dual-norm inner adversary) or sandwiched between an attack and
a Lipschitz pull-back certificate.

Perturbation budgets are l_p balls with p >= 2. Two reductions appear
throughout: the containment of the l_p ball in the l2 ball of radius
eps * d^(1/2 - 1/p), and the exact dual-norm margin eps * ||v||_q for
linear scores.
"""

import math
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, run_attack_batch
from .classifiers import BayesGmmClassifier, LinearClassifier, sign_pm1
from .models import Identity
from .numerics import SQRT_2PI, normal_cdf, sigma_min, svd


@dataclass(frozen=True)
class AdversaryBudget:
    """l_p perturbation ball of radius epsilon; p >= 2, math.inf allowed."""

    p: float
    epsilon: float

    def __post_init__(self):
        if not (self.p >= 2.0):
            raise ValueError("p must be >= 2, got %r" % (self.p,))
        if not (self.epsilon >= 0.0):
            raise ValueError("epsilon must be >= 0, got %r" % (self.epsilon,))


def effective_l2_radius(budget, d):
    """Radius of the smallest l2 ball containing the l_p ball in R^d.

    eps * d^(1/2 - 1/p); for p = inf this is eps * sqrt(d).
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if math.isinf(budget.p):
        return budget.epsilon * math.sqrt(d)
    return budget.epsilon * d ** (0.5 - 1.0 / budget.p)


def dual_exponent(p):
    if math.isinf(p):
        return 1.0
    if p == 1.0:
        return math.inf
    return p / (p - 1.0)


def dual_norm(v, p):
    """||v||_q with q the dual exponent of p."""
    v = np.asarray(v, dtype=np.float64)
    q = dual_exponent(p)
    if q == 1.0:
        return float(np.sum(np.abs(v)))
    if math.isinf(q):
        return float(np.max(np.abs(v)))
    return float(np.sum(np.abs(v) ** q) ** (1.0 / q))


def dual_norm_margin(theta, budget):
    """Exact worst-case drop of a linear score over the l_p ball."""
    theta = np.asarray(theta, dtype=np.float64)
    if not np.any(theta):
        raise ValueError("theta must be nonzero")
    return budget.epsilon * dual_norm(theta, budget.p)


def condition_ratio(W, budget, d=None):
    """eps_p * d^(1/2 - 1/p) / sigma_min(W), the ratio whose vanishing
    drives all three boundary-risk bounds."""
    W = np.asarray(W, dtype=np.float64)
    if d is None:
        d = W.shape[0]
    return effective_l2_radius(budget, d) / sigma_min(W)


@dataclass(frozen=True)
class RiskReport:
    """Risk estimates with Monte Carlo error bars.

    ar_lo == ar_hi for exact methods; sandwich estimates carry the interval
    [ar_lo, ar_hi] and BR inherits it. Standard errors are zero for closed
    forms.
    """

    sr: float
    ar_lo: float
    ar_hi: float
    sr_se: float
    ar_se: float
    br_se: float
    n_samples: int
    method: str

    def __post_init__(self):
        eps = 1e-12
        if not (-eps <= self.sr <= 1 + eps):
            raise ValueError("sr out of [0,1]: %r" % (self.sr,))
        if self.ar_lo > self.ar_hi + eps:
            raise ValueError("ar_lo > ar_hi")
        if self.sr > self.ar_lo + eps:
            raise ValueError("sr exceeds ar_lo; boundary risk would be negative")

    @property
    def ar(self):
        if self.ar_lo != self.ar_hi:
            raise ValueError("ar is an interval [%g, %g]" % (self.ar_lo, self.ar_hi))
        return self.ar_lo

    @property
    def br_lo(self):
        return max(self.ar_lo - self.sr, 0.0)

    @property
    def br_hi(self):
        return max(self.ar_hi - self.sr, 0.0)

    @property
    def br(self):
        if self.ar_lo != self.ar_hi:
            raise ValueError("br is an interval [%g, %g]" % (self.br_lo, self.br_hi))
        return self.br_lo


@dataclass(frozen=True)
class OracleVerdicts:
    """Per-sample verdicts from an adversarial oracle.

    certified implies truly robust; unflipped means the attack failed, which
    upper-bounds robustness. Exact oracles set the two equal and exact=True.
    """

    clean_correct: np.ndarray
    certified: np.ndarray
    unflipped: np.ndarray
    exact: bool


def binomial_se(p_hat, n):
    if n <= 0:
        return 0.0
    return math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n)


def _ties_to_labels(score):
    return sign_pm1(score)


def linear_decision_oracle(v, b, budget):
    """Exact oracle for the decision sign(v^T x - b) under an l_p ball.

    Robust-correct iff y (v^T x - b) > eps ||v||_q (the worst perturbation
    moves the score by exactly the dual-norm margin). A point on the
    decision boundary is robust-incorrect for every eps >= 0.
    """
    v = np.asarray(v, dtype=np.float64)
    margin = dual_norm_margin(v, budget)

    def oracle(x, y):
        score = np.asarray(x, dtype=np.float64) @ v - b
        clean = _ties_to_labels(score) == y
        robust = y * score > margin
        return OracleVerdicts(
            clean_correct=clean, certified=robust, unflipped=robust, exact=True
        )

    return oracle


def exact_linear_oracle(classifier, budget):
    """Exact oracle for a LinearClassifier or an Identity-phi Bayes
    classifier (any object exposing a linear decision in x)."""
    v, b = _linear_form(classifier)
    return linear_decision_oracle(v, b, budget)


def _linear_form(classifier):
    if isinstance(classifier, LinearClassifier):
        return classifier.theta, 0.0
    direction = getattr(classifier, "direction", None)
    if direction is not None:
        phi = getattr(classifier, "phi", None)
        if phi is not None and not isinstance(phi, Identity):
            raise ValueError(
                "decision is linear in x only for the identity feature map"
            )
        return np.asarray(direction, dtype=np.float64), float(classifier.threshold)
    if isinstance(classifier, tuple) and len(classifier) == 2:
        return np.asarray(classifier[0], dtype=np.float64), float(classifier[1])
    raise TypeError("cannot extract a linear decision from %r" % (classifier,))


def pgd_sandwich_oracle(w, b, phi, budget, d, attack=None, clip=None):
    """Sandwich oracle for the pulled-back decision sign(w^T phi^-1(x) - b).

    Certificate side: phi^-1 maps the x-space l2 ball of radius r into the
    l2 ball of radius r / c around phi^-1(x) (derivative of phi bounded
    below by c), so y (w^T phi^-1(x) - b) > (eps_eff / c) ||w||_2 certifies
    robustness, with eps_eff the effective l2 radius of the l_p budget.

    Attack side: PGD on the score in x space inside the l2 ball of radius
    eps (contained in the l_p ball for p >= 2, so flips are genuine).

    Maps without a derivative bound (tanh) get no certificate: the oracle
    is attack-only and certified collapses to the attack verdict, flagged
    through exact=False and the report method "mc-attack-only".
    """
    w = np.asarray(w, dtype=np.float64)
    eps_eff = effective_l2_radius(budget, d)
    if attack is None:
        attack = AttackConfig(
            kind="pgd", epsilon=budget.epsilon, steps=40, clip=clip
        )
    w_norm = float(np.linalg.norm(w))

    def score_fn(x):
        return phi.inverse(x) @ w - b

    def grad_fn(x, y):
        # gradient of the attack loss -y * score
        return (-y)[:, None] * (phi.inverse_derivative(x) * w)

    def oracle(x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y)
        score = score_fn(x)
        clean = _ties_to_labels(score) == y

        flipped = np.zeros(len(y), dtype=bool)
        if budget.epsilon > 0:
            _, visited_flip = run_attack_batch(
                x, y, grad_fn, attack,
                classify=lambda xs: _ties_to_labels(score_fn(xs)),
            )
            flipped = visited_flip
        unflipped = clean & ~flipped

        if phi.c is None:
            return OracleVerdicts(
                clean_correct=clean, certified=unflipped, unflipped=unflipped,
                exact=False,
            )
        cert_margin = (eps_eff / phi.c) * w_norm
        certified = y * score > cert_margin
        return OracleVerdicts(
            clean_correct=clean, certified=certified, unflipped=unflipped,
            exact=False,
        )

    oracle.attack_only = phi.c is None
    return oracle


def monte_carlo_risks(sampler, oracle, n, rng, chunk=20000):
    """Monte Carlo risk estimate from per-sample oracle verdicts.

    Parameters
    ----------
    sampler : callable (n, rng) -> SampleBatch
    oracle : callable (x, y) -> OracleVerdicts
    n : int, total sample count
    rng : numpy Generator, consumed sequentially (deterministic)
    chunk : int, samples per block (memory cap)

    Returns
    -------
    RiskReport with method "mc-exact", "mc-sandwich", or "mc-attack-only".
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    n_clean_bad = 0
    n_not_cert = 0      # clean and not certified -> br_hi numerator
    n_attacked = 0      # clean and flipped -> br_lo numerator
    exact = True
    attack_only = bool(getattr(oracle, "attack_only", False))
    done = 0
    while done < n:
        m = min(chunk, n - done)
        batch = sampler(m, rng)
        v = oracle(batch.x, batch.y)
        n_clean_bad += int(np.sum(~v.clean_correct))
        n_not_cert += int(np.sum(v.clean_correct & ~v.certified))
        n_attacked += int(np.sum(v.clean_correct & ~v.unflipped))
        exact = exact and v.exact
        done += m

    sr = n_clean_bad / n
    ar_lo = (n_clean_bad + n_attacked) / n
    ar_hi = (n_clean_bad + n_not_cert) / n
    sr_se = binomial_se(sr, n)
    ar_se = max(binomial_se(ar_lo, n), binomial_se(ar_hi, n))
    br_se = max(binomial_se(n_attacked / n, n), binomial_se(n_not_cert / n, n))
    if exact:
        method = "mc-exact"
    elif attack_only:
        method = "mc-attack-only"
    else:
        method = "mc-sandwich"
    return RiskReport(
        sr=sr, ar_lo=ar_lo, ar_hi=ar_hi,
        sr_se=sr_se, ar_se=ar_se, br_se=br_se,
        n_samples=n, method=method,
    )


def linear_gmm_risks_closed(model, classifier, budget):
    """Exact risks of a linear-in-x decision on an Identity-phi mixture law.

    With score v^T x - b, x = W z, z ~ N(y mu, I): the score given y is
    N(y m - (b - ...)) with m = v^T W mu and s = ||W^T v||. Conditioning on
    the two classes and shifting by the dual-norm margin delta gives

        SR = pi Phi((b - m)/s) + (1 - pi) Phi(-(m + b)/s)
        AR = pi Phi((b - m + delta)/s) + (1 - pi) Phi((delta - m - b)/s)

    and BR = AR - SR. Degenerate s = 0 (v orthogonal to the column space)
    reduces to indicator arithmetic on the constant score.
    """
    if not isinstance(model.phi, Identity):
        raise ValueError("closed form requires the identity feature map")
    v, b = _linear_form(classifier)
    if v.shape[0] != model.d:
        raise ValueError("classifier dimension %d != model dimension %d"
                         % (v.shape[0], model.d))
    m = float(v @ model.W @ model.mu)
    s = float(np.linalg.norm(model.W.T @ v))
    delta = dual_norm_margin(v, budget)
    pi = model.pi

    if s < 1e-300:
        # constant score -b: classify sign(-b) always
        plus_bad = 1.0 if -b < 0 else 0.0          # sign(-b) = -1
        minus_bad = 1.0 if -b >= 0 else 0.0
        sr = pi * plus_bad + (1 - pi) * minus_bad
        plus_bad_adv = 1.0 if not (-b > delta) else 0.0
        minus_bad_adv = 1.0 if not (b > delta) else 0.0
        ar = pi * plus_bad_adv + (1 - pi) * minus_bad_adv
    else:
        sr = pi * normal_cdf((b - m) / s) + (1 - pi) * normal_cdf(-(m + b) / s)
        ar = (pi * normal_cdf((b - m + delta) / s)
              + (1 - pi) * normal_cdf((delta - m - b) / s))
    sr = float(sr)
    ar = float(max(ar, sr))
    return RiskReport(
        sr=sr, ar_lo=ar, ar_hi=ar, sr_se=0.0, ar_se=0.0, br_se=0.0,
        n_samples=0, method="closed-form",
    )


def _require_slope_bound(phi):
    if phi.c is None:
        raise ValueError(
            "feature map %r has no derivative lower bound; theoretical "
            "bounds are unavailable" % (phi.name,)
        )
    return phi.c


def gmm_br_bound(model, budget, d=None):
    """Boundary-risk bound for the Bayes classifier on the mixture law:
    eps_eff / (c sqrt(2 pi) sigma_min(W))."""
    c = _require_slope_bound(model.phi)
    if d is None:
        d = model.d
    eps_eff = effective_l2_radius(budget, d)
    return eps_eff / (c * SQRT_2PI * sigma_min(model.W))


@dataclass(frozen=True)
class GlmBrBound:
    """Both forms of the GLM boundary-risk bound; two_phi <= lipschitz."""

    lipschitz: float
    two_phi: float


def glm_br_bound(model, budget, d=None):
    """Boundary-risk bounds for the Bayes classifier on the GLM law.

    Lipschitz form: 2 eps_eff / (c sqrt(2 pi) sigma_min(W)). Sharper
    two-Phi form: Phi((c0 + eps_eff ||gamma|| / c) / ||beta||) -
    Phi((c0 - eps_eff ||gamma|| / c) / ||beta||) with gamma = W (W^T W)^-1
    beta and c0 = f^-1(1/2) = 0 for the logistic and probit links.
    """
    c = _require_slope_bound(model.phi)
    if d is None:
        d = model.d
    eps_eff = effective_l2_radius(budget, d)
    smin = sigma_min(model.W)
    lipschitz = 2.0 * eps_eff / (c * SQRT_2PI * smin)

    res = svd(model.W)
    r = res.numerical_rank
    gamma = res.U[:, :r] @ ((res.V[:, :r].T @ model.beta) / res.singular_values[:r])
    gnorm = float(np.linalg.norm(gamma))
    bnorm = float(np.linalg.norm(model.beta))
    if bnorm == 0.0:
        raise ValueError("beta must be nonzero for the two-Phi bound")
    c0 = 0.0
    half_width = eps_eff * gnorm / c
    two_phi = float(
        normal_cdf((c0 + half_width) / bnorm) - normal_cdf((c0 - half_width) / bnorm)
    )
    return GlmBrBound(lipschitz=float(lipschitz), two_phi=two_phi)


def kernel_fraction(theta, W):
    """||P_{Ker(W^T)} theta||^2 / ||theta||^2 via the SVD column basis."""
    theta = np.asarray(theta, dtype=np.float64)
    tnorm2 = float(theta @ theta)
    if tnorm2 == 0.0:
        raise ValueError("theta must be nonzero")
    res = svd(np.asarray(W, dtype=np.float64))
    r = res.numerical_rank
    coeffs = res.U[:, :r].T @ theta
    col2 = float(coeffs @ coeffs)
    return max(0.0, min(1.0, 1.0 - col2 / tnorm2))


def linear_br_bound(theta, W, budget, d=None):
    """Boundary-risk bound for an arbitrary linear classifier:
    (eps_eff / (sqrt(2 pi) sigma_min(W))) / sqrt(1 - kernel fraction).

    A theta lying entirely in Ker(W^T) has no signal component and the
    bound is infinite.
    """
    W = np.asarray(W, dtype=np.float64)
    if d is None:
        d = W.shape[0]
    eps_eff = effective_l2_radius(budget, d)
    frac = kernel_fraction(theta, W)
    if frac >= 1.0 - 1e-15:
        return math.inf
    return (eps_eff / (SQRT_2PI * sigma_min(W))) / math.sqrt(1.0 - frac)


def lemma_g(sigma, epsilon):
    """g(sigma) = E_{z ~ N(0,1)}[Phi(eps + sigma z) - Phi(sigma z)].

    Gaussian smoothing collapses the expectation:
    E Phi(a + sigma z) = Phi(a / sqrt(1 + sigma^2)), so
    g(sigma) = Phi(eps / sqrt(1 + sigma^2)) - 1/2, nonincreasing in sigma.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return float(normal_cdf(epsilon / math.sqrt(1.0 + sigma * sigma)) - 0.5)


def lemma_g_quadrature(sigma, epsilon, nodes=64):
    """Gauss-Hermite evaluation of E[Phi(eps + sigma z) - Phi(sigma z)];
    the independent cross-check for lemma_g."""
    x, w = np.polynomial.hermite.hermgauss(nodes)
    z = math.sqrt(2.0) * x
    vals = normal_cdf(epsilon + sigma * z) - normal_cdf(sigma * z)
    return float(np.sum(w * vals) / math.sqrt(math.pi))


def prop2_constant(budget):
    """The dimension-free lower-bound constant Phi(eps / sqrt 2) - 1/2
    for the single-coordinate classifier (equals lemma_g(1, eps))."""
    if budget.epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    return float(normal_cdf(budget.epsilon / math.sqrt(2.0)) - 0.5)


def e1_classifier_br_closed(model, budget):
    """Closed-form BR of h(x) = sign(x_1) on the sphere-rows mixture law,
    with mu ~ N(0, I_k / k) integrated out: Phi(eps / sqrt(1 + 1/k)) - 1/2.
    """
    if not isinstance(model.phi, Identity):
        raise ValueError("construction requires the identity feature map")
    if abs(model.pi - 0.5) > 1e-12:
        raise ValueError("construction requires balanced classes")
    row_norms = np.linalg.norm(model.W, axis=1)
    if np.max(np.abs(row_norms - 1.0)) > 1e-8:
        raise ValueError("construction requires unit-norm rows of W")
    k = model.k
    return float(normal_cdf(budget.epsilon / math.sqrt(1.0 + 1.0 / k)) - 0.5)
