"""Dense linear-algebra kernels shared by every other module.

Thin wrappers over LAPACK (via numpy) that pin down the numerical-rank
convention, the Moore-Penrose pseudo-inverse, sampling from possibly
singular Gaussians, the standard normal CDF, and deterministic derivation
of child random streams. All functions are pure; random streams are owned
by one caller at a time.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

SQRT_2PI = float(np.sqrt(2.0 * np.pi))

_RANK_TOL_FLOOR = 1e-12


def rank_tolerance(shape, sigma_max):
    """Threshold below which a singular value counts as zero.

    max(rows, cols) * sigma_max * machine epsilon, floored at 1e-12 so a
    zero matrix still gets a positive tolerance.
    """
    scale = max(shape) * float(sigma_max) * np.finfo(np.float64).eps
    return max(scale, _RANK_TOL_FLOOR)


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD m = U diag(s) V^T with an explicit numerical rank.

    Attributes
    ----------
    U : (d, r) ndarray with orthonormal columns
    singular_values : (r,) ndarray, nonincreasing, nonnegative
    V : (k, r) ndarray with orthonormal columns
    numerical_rank : int, count of singular values above the rank tolerance
    """

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray
    numerical_rank: int

    @property
    def tolerance(self):
        if self.singular_values.size == 0:
            return _RANK_TOL_FLOOR
        smax = self.singular_values[0] if self.singular_values.size else 0.0
        return rank_tolerance((self.U.shape[0], self.V.shape[0]), smax)


def svd(m):
    """Thin SVD with numerical rank.

    Parameters
    ----------
    m : (d, k) array_like, finite entries

    Returns
    -------
    SvdResult

    Raises
    ------
    ValueError
        Non-finite entries.
    numpy.linalg.LinAlgError
        LAPACK failed to converge.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a 2-d array, got shape %r" % (m.shape,))
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    smax = s[0] if s.size else 0.0
    tol = rank_tolerance(m.shape, smax)
    rank = int(np.count_nonzero(s > tol))
    return SvdResult(U=u, singular_values=s, V=vt.T, numerical_rank=rank)


def sigma_min(m):
    """Smallest nonzero singular value of m.

    "Nonzero" means above the numerical rank tolerance; an all-zero (or
    numerically rank-0) matrix has no such value and raises.
    """
    res = svd(m)
    if res.numerical_rank == 0:
        raise ValueError("matrix has numerical rank 0, sigma_min undefined")
    return float(res.singular_values[res.numerical_rank - 1])


def pseudo_inverse(m):
    """Moore-Penrose inverse via SVD with the shared rank tolerance."""
    res = svd(m)
    r = res.numerical_rank
    if r == 0:
        return np.zeros((np.asarray(m).shape[1], np.asarray(m).shape[0]))
    u = res.U[:, :r]
    s = res.singular_values[:r]
    v = res.V[:, :r]
    return (v / s) @ u.T


def psd_factor(cov):
    """Factor L with L L^T = cov for symmetric PSD cov, allowing rank deficiency.

    Eigenvalues are clipped at 0 before the square root, so covariances that
    are singular by construction (e.g. W W^T with a tall W) are accepted.
    Asymmetry or genuinely negative eigenvalues raise ValueError.
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square, got shape %r" % (cov.shape,))
    sym_err = np.max(np.abs(cov - cov.T)) if cov.size else 0.0
    scale = np.max(np.abs(cov)) if cov.size else 0.0
    if sym_err > 1e-8 * max(scale, 1.0):
        raise ValueError("covariance is not symmetric (max asymmetry %g)" % sym_err)
    w, q = np.linalg.eigh((cov + cov.T) / 2.0)
    if w.size and w[0] < -1e-8 * max(scale, 1.0):
        raise ValueError("covariance has negative eigenvalue %g" % w[0])
    w = np.clip(w, 0.0, None)
    return q * np.sqrt(w)


def cholesky_sampler(cov, mean, rng):
    """One draw from N(mean, cov); cov may be singular PSD.

    Returns mean + L g with L L^T = cov and g standard normal from rng.
    """
    mean = np.asarray(mean, dtype=np.float64)
    L = psd_factor(cov)
    g = rng.standard_normal(L.shape[1])
    return mean + L @ g


def normal_cdf(t):
    """Standard normal CDF, double precision (abs error < 1e-15)."""
    return ndtr(t)


def normal_pdf(t):
    t = np.asarray(t, dtype=np.float64)
    return np.exp(-0.5 * t * t) / SQRT_2PI


# SplitMix64 finalizer; the chain below is the documented, version-stable
# derivation of per-cell random streams. Changing it breaks CSV reproducibility.
_GOLDEN = 0x9E3779B97F4A7C15
_MASK = 0xFFFFFFFFFFFFFFFF


def _splitmix_round(z):
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix64(*parts):
    """Deterministic 64-bit mix of integer parts (seed derivation).

    mix64(base_seed, cell_index, trial_index) is the contract used by the
    sweep runners; each argument is folded through a SplitMix64 round.
    """
    acc = 0
    for p in parts:
        acc = _splitmix_round(acc ^ (int(p) & _MASK))
    return acc


def spawn_rng(*parts):
    """Child numpy Generator seeded from mix64 of the given parts."""
    return np.random.default_rng(mix64(*parts))
