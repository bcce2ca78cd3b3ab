"""l2 gradient attacks: fast gradient method, projected gradient descent,
and minimal-flip-radius search.

Attacks maximize a caller-supplied loss (for classifiers, minus the
label-signed decision score). FGM takes one normalized gradient step of
length epsilon; PGD iterates smaller steps, projecting back onto the
epsilon ball after each one. Outputs are clipped entrywise to the valid
box when one is configured, after the step (FGM) or after every
projection (PGD), matching the pixel-space convention.

Gradient callables take a batch: grad_fn(X, y) -> per-sample gradients of
the loss, shape (n, d). Zero gradients leave the sample untouched and are
reported in a flag mask so callers can retry with jitter if they want
nondeterminism; the attack itself stays deterministic.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters.

    kind is "fgm" or "pgd". step_size applies to PGD only and defaults to
    2.5 * epsilon / steps, which lets the iterates traverse the ball.
    clip, when present, is an entrywise (low, high) box. keep_best makes
    PGD return the visited iterate with the largest loss instead of the
    last one (needs a loss function at run time).
    """

    kind: str
    epsilon: float
    steps: int = 40
    step_size: float = None
    clip: tuple = None
    keep_best: bool = True

    def __post_init__(self):
        if self.kind not in ("fgm", "pgd"):
            raise ValueError("kind must be 'fgm' or 'pgd', got %r" % (self.kind,))
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.kind == "pgd" and self.steps < 1:
            raise ValueError("pgd needs steps >= 1")
        if self.step_size is not None and not (self.step_size > 0):
            raise ValueError("step_size must be positive when given")
        if self.clip is not None and not (self.clip[0] < self.clip[1]):
            raise ValueError("clip box needs low < high")


@dataclass(frozen=True)
class AttackResult:
    """Single-sample attack output; zero_gradient marks a no-op."""

    x: np.ndarray
    zero_gradient: bool


def project_l2_ball(point, center, radius):
    """Euclidean projection of point(s) onto the ball B_radius(center).

    point may be a vector or an (n, d) batch; radius may be a scalar or a
    per-row array. Interior points come back unchanged; projection is
    idempotent.
    """
    point = np.asarray(point, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    diff = point - center
    if point.ndim == 1:
        dist = float(np.linalg.norm(diff))
        r = float(radius)
        if dist <= r or dist == 0.0:
            return point.copy()
        return center + diff * (r / dist)
    dist = np.linalg.norm(diff, axis=1)
    r = np.broadcast_to(np.asarray(radius, dtype=np.float64), dist.shape)
    scale = np.ones_like(dist)
    outside = dist > r
    scale[outside] = r[outside] / dist[outside]
    return center + diff * scale[:, None]


def _clip_box(x, clip):
    if clip is None:
        return x
    return np.clip(x, clip[0], clip[1])


def _normalized_rows(g):
    norms = np.linalg.norm(g, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return g / safe[:, None], zero


def fgm_batch(x, y, grad_fn, config, epsilon=None):
    """Batched FGM: x + eps * g / ||g||, then box clip.

    epsilon optionally overrides config.epsilon and may be per-sample.
    Returns (x_adv, zero_gradient_mask). Rows with zero gradient are
    returned unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = x.shape[0]
    eps = np.broadcast_to(
        np.asarray(config.epsilon if epsilon is None else epsilon,
                   dtype=np.float64), (n,))
    if np.all(eps == 0):
        return x.copy(), np.zeros(n, dtype=bool)
    g = np.asarray(grad_fn(x, y), dtype=np.float64)
    direction, zero = _normalized_rows(g)
    x_adv = x + eps[:, None] * direction
    x_adv[zero] = x[zero]
    return _clip_box(x_adv, config.clip), zero


def pgd_batch(x, y, grad_fn, config, loss_fn=None, classify=None,
              epsilon=None):
    """Batched PGD inside per-sample l2 balls.

    Parameters
    ----------
    x, y : (n, d) clean points and their labels
    grad_fn : callable (X, y) -> (n, d) loss gradients
    config : AttackConfig (kind "pgd"; kind "fgm" degrades to fgm_batch)
    loss_fn : optional callable (X, y) -> (n,) losses; required for
        keep_best to select the best visited iterate, otherwise the last
        iterate is returned
    classify : optional callable (X) -> (n,) labels; when given, the
        returned flip mask records whether any visited iterate (the clean
        point included) was misclassified
    epsilon : optional scalar or (n,) per-sample radii overriding
        config.epsilon

    Returns
    -------
    (x_out, flipped) where flipped is None when classify is None.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = x.shape[0]
    eps = np.broadcast_to(
        np.asarray(config.epsilon if epsilon is None else epsilon,
                   dtype=np.float64), (n,))

    if config.kind != "pgd":
        raise ValueError("pgd_batch needs a pgd config; use run_attack_batch")

    if config.step_size is not None:
        step = np.broadcast_to(np.float64(config.step_size), (n,))
    else:
        step = 2.5 * eps / config.steps

    cur = x.copy()
    flipped = None
    if classify is not None:
        flipped = np.asarray(classify(cur)) != y
    best_x = cur.copy()
    best_loss = None
    if loss_fn is not None and config.keep_best:
        best_loss = np.asarray(loss_fn(cur, y), dtype=np.float64).copy()

    if np.all(eps == 0):
        return best_x, flipped

    for _ in range(config.steps):
        g = np.asarray(grad_fn(cur, y), dtype=np.float64)
        direction, zero = _normalized_rows(g)
        cand = cur + step[:, None] * direction
        cand[zero] = cur[zero]
        cand = project_l2_ball(cand, x, eps)
        cand = _clip_box(cand, config.clip)
        cur = cand
        if classify is not None:
            flipped |= np.asarray(classify(cur)) != y
        if best_loss is not None:
            losses = np.asarray(loss_fn(cur, y), dtype=np.float64)
            better = losses > best_loss
            best_loss[better] = losses[better]
            best_x[better] = cur[better]
        else:
            best_x = cur
    return best_x, flipped


def run_attack_batch(x, y, grad_fn, config, loss_fn=None, classify=None,
                     epsilon=None):
    """Dispatch on config.kind; FGM and PGD share the return convention."""
    if config.kind == "fgm":
        x_adv, _ = fgm_batch(x, y, grad_fn, config, epsilon=epsilon)
        flipped = None
        if classify is not None:
            flipped = ((np.asarray(classify(x)) != np.asarray(y))
                       | (np.asarray(classify(x_adv)) != np.asarray(y)))
        return x_adv, flipped
    return pgd_batch(x, y, grad_fn, config, loss_fn=loss_fn,
                     classify=classify, epsilon=epsilon)


def fgm(x, y, loss_gradient, config):
    """Single-sample FGM; see fgm_batch. Returns AttackResult."""
    x = np.asarray(x, dtype=np.float64)

    def grad_fn(xb, yb):
        return np.asarray(loss_gradient(xb[0], yb[0]))[None, :]

    x_adv, zero = fgm_batch(x[None, :], np.asarray([y]), grad_fn, config)
    return AttackResult(x=x_adv[0], zero_gradient=bool(zero[0]))


def pgd(x, y, loss_gradient, config, loss_fn=None):
    """Single-sample PGD; see pgd_batch. Returns AttackResult.

    The zero_gradient flag reports a zero gradient at the clean point.
    """
    x = np.asarray(x, dtype=np.float64)

    def grad_fn(xb, yb):
        return np.asarray(loss_gradient(xb[0], yb[0]))[None, :]

    g0 = np.asarray(loss_gradient(x, y), dtype=np.float64)
    zero0 = not np.any(g0)
    lf = None
    if loss_fn is not None:
        def lf(xb, yb):
            return np.asarray([loss_fn(xb[0], yb[0])])
    x_adv, _ = pgd_batch(x[None, :], np.asarray([y]), grad_fn, config,
                         loss_fn=lf)
    return AttackResult(x=x_adv[0], zero_gradient=zero0)


@dataclass(frozen=True)
class RadiusSearch:
    """Search schedule for the minimal flip radius.

    Either an explicit nondecreasing eps_grid, or bisection on [lo, hi]
    with the given iteration count.
    """

    eps_grid: tuple = None
    lo: float = 0.0
    hi: float = None
    iters: int = 9

    def __post_init__(self):
        if self.eps_grid is None and self.hi is None:
            raise ValueError("need either eps_grid or a bisection hi")


@dataclass(frozen=True)
class RadiusResult:
    """Minimal flip radius; found=False carries the exhausted eps_max."""

    radius: float
    found: bool


def minimal_adversarial_radius(flips, search):
    """Smallest epsilon at which the attack flips the sample.

    Parameters
    ----------
    flips : callable (eps) -> bool, monotone in eps for sound attacks
    search : RadiusSearch

    Returns
    -------
    RadiusResult. Grid mode returns the first flipping grid value;
    bisection returns the upper end of the final bracket, within
    (hi - lo) / 2^iters of the true threshold for monotone flips.
    """
    if search.eps_grid is not None:
        last = None
        for eps in search.eps_grid:
            last = eps
            if flips(float(eps)):
                return RadiusResult(radius=float(eps), found=True)
        return RadiusResult(radius=float(last), found=False)

    lo, hi = float(search.lo), float(search.hi)
    if flips(lo):
        return RadiusResult(radius=lo, found=True)
    if not flips(hi):
        return RadiusResult(radius=hi, found=False)
    for _ in range(search.iters):
        mid = 0.5 * (lo + hi)
        if flips(mid):
            hi = mid
        else:
            lo = mid
    return RadiusResult(radius=hi, found=True)


def minimal_radius_bisect_batch(flips_at, n, lo, hi, iters=9):
    """Vectorized bisection for per-sample minimal flip radii.

    Parameters
    ----------
    flips_at : callable (eps: (n,) array) -> bool (n,) flip verdicts
    n : sample count
    lo, hi : bracket endpoints (scalars)
    iters : bisection iterations

    Returns
    -------
    (radii, found): radii are the per-sample upper bracket ends; samples
    that never flip at hi get radius hi and found=False.
    """
    lo_v = np.full(n, float(lo))
    hi_v = np.full(n, float(hi))
    at_lo = flips_at(lo_v)
    at_hi = flips_at(hi_v)
    found = np.asarray(at_hi, dtype=bool).copy()
    # samples flipping already at lo keep radius lo
    done_lo = np.asarray(at_lo, dtype=bool)
    hi_v[done_lo] = lo
    active = found & ~done_lo
    for _ in range(iters):
        if not np.any(active):
            break
        mid = 0.5 * (lo_v + hi_v)
        probe = np.where(active, mid, hi_v)
        flip = np.asarray(flips_at(probe), dtype=bool)
        take_hi = active & flip
        take_lo = active & ~flip
        hi_v[take_hi] = mid[take_hi]
        lo_v[take_lo] = mid[take_lo]
    return hi_v, found
