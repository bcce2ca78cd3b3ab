"""Mixture of factor analyzers: low-rank Gaussian mixtures for images.

Each component is N(mu_k, A_k A_k^T + D_k) with A_k a d x ell loading
matrix and D_k a positive diagonal. All likelihood arithmetic goes through
the small ell x ell matrix L = I + A^T D^-1 A:

    Sigma^-1 u = D^-1 u - D^-1 A L^-1 (A^T D^-1 u)
    log det Sigma = log det L + sum_j log d_j

so nothing of size d x d is ever formed. Fitting is EM with responsibility
weights; the mean is folded into an augmented loading matrix for the
M-step. A variance floor keeps D away from singularity; flooring is the
constrained M-step maximizer, so the likelihood ascent survives it.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .classifiers import sign_pm1

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MFAComponent:
    alpha: float
    mu: np.ndarray
    A: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        A = np.asarray(self.A, dtype=np.float64)
        D = np.asarray(self.D, dtype=np.float64)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "D", D)
        d = mu.shape[0]
        if A.ndim != 2 or A.shape[0] != d:
            raise ValueError("A must be (d, ell) with d = %d" % d)
        if A.shape[1] > d:
            raise ValueError("ell must not exceed d")
        if D.shape != (d,):
            raise ValueError("D must be a length-d vector of variances")
        if np.any(D < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ValueError("D entries must respect the variance floor")
        if not (self.alpha > 0):
            raise ValueError("component weight must be positive")


@dataclass(frozen=True)
class MFAModel:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("model needs at least one component")
        total = sum(c.alpha for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValueError("component weights must sum to 1, got %.17g" % total)
        d = comps[0].mu.shape[0]
        ell = comps[0].A.shape[1]
        for c in comps:
            if c.mu.shape[0] != d or c.A.shape[1] != ell:
                raise ValueError("components must share d and ell")

    @property
    def d(self):
        return self.components[0].mu.shape[0]

    @property
    def ell(self):
        return self.components[0].A.shape[1]

    @property
    def K(self):
        return len(self.components)


def _small_factor(A, D):
    """Cholesky of L = I + A^T D^-1 A; raises on degeneracy."""
    ell = A.shape[1]
    L = np.eye(ell) + (A.T / D) @ A
    try:
        return cho_factor(L, lower=True), L
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate component: L is not positive definite") from exc


def component_loglik(x, mu, A, D):
    """Gaussian log-density with covariance A A^T + D, evaluated via the
    ell x ell machinery. x may be (d,) or (n, d); returns float or (n,).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    mu = np.asarray(mu, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    d = mu.shape[0]
    cho, L = _small_factor(A, D)
    diff = X - mu
    dinv_diff = diff / D
    t = dinv_diff @ A                     # (n, ell)
    s = cho_solve(cho, t.T).T
    quad = np.einsum("ij,ij->i", diff, dinv_diff) - np.einsum("ij,ij->i", t, s)
    sign, logdet_L = np.linalg.slogdet(L)
    if sign <= 0:
        raise ValueError("degenerate component: nonpositive det(L)")
    logdet = logdet_L + float(np.sum(np.log(D)))
    ll = -0.5 * (d * _LOG_2PI + logdet + quad)
    return float(ll[0]) if single else ll


def _component_loglik_matrix(model, X):
    cols = [
        np.log(c.alpha) + component_loglik(X, c.mu, c.A, c.D)
        for c in model.components
    ]
    return np.stack(cols, axis=1)


def mixture_loglik(model, x):
    """log sum_k alpha_k N(x; mu_k, A_k A_k^T + D_k); (d,) or (n, d) input."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    ll = logsumexp(_component_loglik_matrix(model, X), axis=1)
    return float(ll[0]) if single else ll


def responsibilities(model, X):
    """Posterior component weights, (n, K), rows summing to 1."""
    M = _component_loglik_matrix(model, np.asarray(X, dtype=np.float64))
    M = M - logsumexp(M, axis=1, keepdims=True)
    return np.exp(M)


def _sigma_inv_times(comp, U):
    """Sigma^-1 applied to rows of U (n, d) for one component."""
    cho, _ = _small_factor(comp.A, comp.D)
    dinv_u = U / comp.D
    t = dinv_u @ comp.A
    s = cho_solve(cho, t.T).T
    return dinv_u - (s @ comp.A.T) / comp.D


def mixture_loglik_gradient(model, x):
    """Gradient of the mixture log-density:
    sum_k r_k(x) Sigma_k^-1 (mu_k - x)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    R = responsibilities(model, X)
    grad = np.zeros_like(X)
    for j, comp in enumerate(model.components):
        grad += R[:, j:j + 1] * _sigma_inv_times(comp, comp.mu - X)
    return grad[0] if single else grad


def mfa_sample(model, n, rng):
    """n draws; component per alpha, then x = mu + A g + sqrt(D) e."""
    if n < 1:
        raise ValueError("n must be >= 1")
    alphas = np.array([c.alpha for c in model.components])
    idx = rng.choice(model.K, size=n, p=alphas)
    X = np.empty((n, model.d))
    for j, comp in enumerate(model.components):
        mask = idx == j
        m = int(mask.sum())
        if m == 0:
            continue
        g = rng.standard_normal((m, comp.A.shape[1]))
        e = rng.standard_normal((m, model.d))
        X[mask] = comp.mu + g @ comp.A.T + np.sqrt(comp.D) * e
    return X


@dataclass(frozen=True)
class MfaBayesClassifier:
    """Two-class rule sign(log p_pos(x) - log p_neg(x) + log_prior_ratio)."""

    model_pos: MFAModel
    model_neg: MFAModel
    log_prior_ratio: float = 0.0

    def __post_init__(self):
        if self.model_pos.d != self.model_neg.d:
            raise ValueError("class models must share the ambient dimension")

    def score(self, x):
        return (mixture_loglik(self.model_pos, x)
                - mixture_loglik(self.model_neg, x)
                + self.log_prior_ratio)

    def classify(self, x):
        return sign_pm1(self.score(x))

    def score_gradient(self, x):
        return (mixture_loglik_gradient(self.model_pos, x)
                - mixture_loglik_gradient(self.model_neg, x))


def mfa_bayes_classify(classifier, x):
    """Label(s) from the two-model likelihood ratio; ties go to +1."""
    return classifier.classify(x)


def mfa_score_gradient(classifier, x):
    """Gradient of the decision score (the attack surface)."""
    return classifier.score_gradient(x)


@dataclass(frozen=True)
class MfaFitConfig:
    max_iterations: int = 200
    tolerance: float = 1e-7
    variance_floor: float = VARIANCE_FLOOR
    projection_dim: int = 20
    reseed_mass: float = 1e-8


@dataclass(frozen=True)
class MfaFitResult:
    model: MFAModel
    trace: tuple          # average log-likelihood after each EM iteration
    reseeds: tuple        # (iteration, component) reseed events
    iterations: int
    converged: bool


def _init_components(X, K, ell, config, rng):
    n, d = X.shape
    pdim = min(config.projection_dim, d)
    proj = rng.standard_normal((d, pdim)) / np.sqrt(pdim)
    if K == 1:
        labels = np.zeros(n, dtype=int)
    else:
        _, labels = kmeans2(X @ proj, K, minit="++", seed=rng)
    comps = []
    global_var = np.maximum(X.var(axis=0), config.variance_floor)
    for j in range(K):
        mask = labels == j
        if mask.sum() < 2:
            # empty or singleton cluster: seed from a random sample
            i = int(rng.integers(n))
            mu = X[i].copy()
            Dv = global_var.copy()
            cluster = X
        else:
            cluster = X[mask]
            mu = cluster.mean(axis=0)
            Dv = np.maximum(cluster.var(axis=0), config.variance_floor)
        if ell == 0:
            A = np.zeros((d, 0))
        else:
            centered = cluster - cluster.mean(axis=0)
            _, s, vt = np.linalg.svd(centered, full_matrices=False)
            lam = s ** 2 / max(len(cluster), 1)
            dbar = float(np.mean(Dv))
            r = min(ell, vt.shape[0])
            scales = np.sqrt(np.maximum(lam[:r] - dbar, 1e-4))
            A = np.zeros((d, ell))
            A[:, :r] = vt[:r].T * scales
            if r < ell:
                A[:, r:] = rng.standard_normal((d, ell - r)) * 1e-3
        comps.append(MFAComponent(
            alpha=max(mask.sum(), 1) / n, mu=mu, A=A, D=Dv))
    total = sum(c.alpha for c in comps)
    comps = [MFAComponent(alpha=c.alpha / total, mu=c.mu, A=c.A, D=c.D)
             for c in comps]
    return comps


def mfa_fit_em(data, K, ell, config=None, rng=None):
    """Fit a K-component, rank-ell MFA by EM.

    Parameters
    ----------
    data : (n, d) array of observations, n >= K
    K, ell : component count and factor dimension (ell = 0 means a purely
        diagonal Gaussian per component)
    config : MfaFitConfig
    rng : numpy Generator (initialization and any component reseeding)

    Returns
    -------
    MfaFitResult; result.trace is nondecreasing except across a reseed,
    which is recorded in result.reseeds and logged.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("data must be (n, d)")
    n, d = X.shape
    if n < K:
        raise ValueError("need at least K samples")
    if ell > d:
        raise ValueError("ell must not exceed d")
    config = config or MfaFitConfig()
    rng = rng if rng is not None else np.random.default_rng(0)

    comps = _init_components(X, K, ell, config, rng)
    trace = []
    reseeds = []
    prev_ll = -np.inf
    converged = False
    it = 0

    for it in range(1, config.max_iterations + 1):
        model = MFAModel(components=tuple(comps))
        M = _component_loglik_matrix(model, X)
        total = logsumexp(M, axis=1)
        avg_ll = float(np.mean(total))
        trace.append(avg_ll)
        R = np.exp(M - total[:, None])

        new_comps = []
        for j, comp in enumerate(model.components):
            r = R[:, j]
            mass = float(r.sum())
            if mass < config.reseed_mass:
                i = int(np.argmin(total))
                log.warning("component %d starved (mass %.3g); reseeding "
                            "from sample %d", j, mass, i)
                reseeds.append((it, j))
                Dv = np.maximum(X.var(axis=0), config.variance_floor)
                A = (rng.standard_normal((d, ell)) * 1e-3 if ell
                     else np.zeros((d, 0)))
                new_comps.append(MFAComponent(
                    alpha=1.0 / n, mu=X[i].copy(), A=A, D=Dv))
                continue

            cho, _ = _small_factor(comp.A, comp.D)
            diff = X - comp.mu
            t = (diff / comp.D) @ comp.A
            q = cho_solve(cho, t.T).T                    # (n, ell)
            # E[gg^T | x] = (I - beta A) + q q^T, shared first term
            beta_A = cho_solve(cho, (comp.A.T / comp.D) @ comp.A)
            S0 = np.eye(ell) - beta_A

            rq = r[:, None] * q
            sum_q = rq.sum(axis=0)
            Sqq = np.empty((ell + 1, ell + 1))
            Sqq[:ell, :ell] = q.T @ rq + mass * S0
            Sqq[:ell, ell] = sum_q
            Sqq[ell, :ell] = sum_q
            Sqq[ell, ell] = mass
            rx = r[:, None] * X
            Sxq = np.empty((d, ell + 1))
            Sxq[:, :ell] = X.T @ rq
            Sxq[:, ell] = rx.sum(axis=0)

            try:
                Aug = np.linalg.solve(Sqq, Sxq.T).T      # (d, ell+1)
            except np.linalg.LinAlgError:
                jitter = 1e-10 * np.eye(ell + 1)
                Aug = np.linalg.solve(Sqq + jitter, Sxq.T).T
            A_new = Aug[:, :ell]
            mu_new = Aug[:, ell]
            second = (rx * X).sum(axis=0)
            cross = np.einsum("ij,ij->i", Aug, Sxq)
            D_new = np.maximum((second - cross) / mass, config.variance_floor)
            new_comps.append(MFAComponent(
                alpha=mass / n, mu=mu_new, A=A_new, D=D_new))

        total_alpha = sum(c.alpha for c in new_comps)
        comps = [MFAComponent(alpha=c.alpha / total_alpha, mu=c.mu,
                              A=c.A, D=c.D) for c in new_comps]

        if np.isfinite(prev_ll):
            if avg_ll - prev_ll < config.tolerance * (abs(prev_ll) + 1.0):
                converged = True
                break
        prev_ll = avg_ll

    model = MFAModel(components=tuple(comps))
    return MfaFitResult(model=model, trace=tuple(trace),
                        reseeds=tuple(reseeds), iterations=it,
                        converged=converged)


_MAGIC = b"MFA1"
_VERSION = 1


def save_mfa(model, path):
    """Binary container: 16-byte header (magic, version, d, ell, K), then
    per component alpha, mu, A (row-major), D as little-endian f64."""
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIIHH", _MAGIC, _VERSION, model.d,
                            model.ell, model.K))
        for c in model.components:
            f.write(struct.pack("<d", c.alpha))
            f.write(c.mu.astype("<f8").tobytes())
            f.write(np.ascontiguousarray(c.A, dtype="<f8").tobytes())
            f.write(c.D.astype("<f8").tobytes())


def load_mfa(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise ValueError("truncated model file (no header)")
    magic, version, d, ell, K = struct.unpack("<4sIIHH", raw[:16])
    if magic != _MAGIC:
        raise ValueError("bad magic %r" % (magic,))
    if version != _VERSION:
        raise ValueError("unsupported version %d" % version)
    off = 16
    comps = []
    per = 8 * (1 + d + d * ell + d)
    for j in range(K):
        if len(raw) < off + per:
            raise ValueError("truncated model file at component %d "
                             "(offset %d)" % (j, off))
        alpha = struct.unpack_from("<d", raw, off)[0]
        off += 8
        mu = np.frombuffer(raw, dtype="<f8", count=d, offset=off).copy()
        off += 8 * d
        A = np.frombuffer(raw, dtype="<f8", count=d * ell,
                          offset=off).reshape(d, ell).copy()
        off += 8 * d * ell
        D = np.frombuffer(raw, dtype="<f8", count=d, offset=off).copy()
        off += 8 * d
        comps.append(MFAComponent(alpha=alpha, mu=mu, A=A, D=D))
    return MFAModel(components=tuple(comps))
