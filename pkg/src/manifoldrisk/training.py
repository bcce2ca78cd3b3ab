"""Robust empirical risk minimization for linear classifiers.

The inner maximization of the worst-case logistic loss over an l_p ball
has the closed-form solution eps * ||theta||_q (dual norm), so the
trainer minimizes

    (1/n) sum_i log(1 + exp(-(y_i x_i^T theta - eps ||theta||_q)))

by full-batch gradient descent with a backtracking line search. The
objective is convex; the only nonsmooth point is theta = 0, which is
never a minimizer for informative data and is avoided by the
initialization.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .risk import dual_exponent, dual_norm, kernel_fraction


@dataclass(frozen=True)
class RobustErmConfig:
    """Trainer hyperparameters.

    step_rule "backtracking" uses an Armijo search (constant 1e-4, shrink
    0.5, unit initial step); "fixed" uses fixed_step as given. init is
    "class-mean-difference" (default) or "zero-plus-jitter", both scaled
    to norm 1e-3.
    """

    epsilon: float = 0.0
    p: float = 2.0
    max_iterations: int = 5000
    gradient_tolerance: float = 1e-8
    step_rule: str = "backtracking"
    fixed_step: float = 0.1
    init: str = "class-mean-difference"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not (self.p >= 2):
            raise ValueError("p must be >= 2")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.step_rule not in ("backtracking", "fixed"):
            raise ValueError("unknown step_rule %r" % (self.step_rule,))
        if self.init not in ("class-mean-difference", "zero-plus-jitter"):
            raise ValueError("unknown init %r" % (self.init,))


@dataclass(frozen=True)
class TrainedModel:
    theta: np.ndarray
    final_objective: float
    iterations_used: int
    converged: bool
    gradient_norm: float


_ARMIJO = 1e-4
_SHRINK = 0.5
_NORM_FLOOR = 1e-12


def _as_arrays(data):
    x = getattr(data, "x", None)
    if x is not None:
        return np.asarray(x, dtype=np.float64), np.asarray(data.y)
    x, y = data
    return np.asarray(x, dtype=np.float64), np.asarray(y)


def _penalty_and_grad(theta, epsilon, p):
    """eps * ||theta||_q and its (sub)gradient; zero gradient at theta = 0."""
    q = dual_exponent(p)
    norm_q = dual_norm(theta, p)
    if epsilon == 0.0:
        return 0.0, np.zeros_like(theta)
    if norm_q <= _NORM_FLOOR:
        return epsilon * norm_q, np.zeros_like(theta)
    if q == 1.0:
        g = np.sign(theta)
    else:
        g = np.sign(theta) * (np.abs(theta) / norm_q) ** (q - 1.0)
    return epsilon * norm_q, epsilon * g


def robust_objective(theta, data, epsilon, p=2.0):
    """Averaged worst-case logistic loss at theta."""
    x, y = _as_arrays(data)
    theta = np.asarray(theta, dtype=np.float64)
    penalty, _ = _penalty_and_grad(theta, epsilon, p)
    t = y * (x @ theta) - penalty
    return float(np.mean(np.logaddexp(0.0, -t)))


def robust_gradient(theta, data, epsilon, p=2.0):
    """Gradient of robust_objective in theta (subgradient at the norm kink)."""
    x, y = _as_arrays(data)
    theta = np.asarray(theta, dtype=np.float64)
    penalty, pen_grad = _penalty_and_grad(theta, epsilon, p)
    t = y * (x @ theta) - penalty
    # d/dt log(1+e^-t) = -sigmoid(-t)
    w = -expit(-t)
    data_part = (w * y) @ x / len(y)
    return data_part - float(np.mean(w)) * pen_grad


def _initial_theta(x, y, config, rng):
    d = x.shape[1]
    theta = None
    if config.init == "class-mean-difference":
        pos = y == 1
        neg = ~pos
        if pos.any() and neg.any():
            theta = x[pos].mean(axis=0) - x[neg].mean(axis=0)
        else:
            theta = (y[:, None] * x).mean(axis=0)
    if theta is None or not np.any(theta):
        theta = rng.standard_normal(d)
    norm = np.linalg.norm(theta)
    if norm == 0.0:
        theta = np.ones(d)
        norm = np.linalg.norm(theta)
    return theta * (1e-3 / norm)


def robust_erm_fit(data, config, rng):
    """Minimize the robust logistic objective by gradient descent.

    Converged means the gradient norm reached config.gradient_tolerance.
    Separable data with a small epsilon has no finite minimizer; the fit
    then runs to the iteration cap with a monotonically decreasing
    objective and reports converged=False, which is informative rather
    than an error (the direction still defines the classifier).

    Returns
    -------
    TrainedModel
    """
    x, y = _as_arrays(data)
    if len(y) == 0:
        raise ValueError("data must be nonempty")
    theta = _initial_theta(x, y, config, rng)
    obj = robust_objective(theta, (x, y), config.epsilon, config.p)
    grad = robust_gradient(theta, (x, y), config.epsilon, config.p)
    gnorm = float(np.linalg.norm(grad))
    iterations = 0
    converged = gnorm <= config.gradient_tolerance

    while not converged and iterations < config.max_iterations:
        iterations += 1
        if config.step_rule == "fixed":
            theta = theta - config.fixed_step * grad
            new_obj = robust_objective(theta, (x, y), config.epsilon, config.p)
        else:
            step = 1.0
            g2 = gnorm * gnorm
            while True:
                cand = theta - step * grad
                cand_obj = robust_objective(cand, (x, y), config.epsilon, config.p)
                if cand_obj <= obj - _ARMIJO * step * g2:
                    break
                step *= _SHRINK
                if step < 1e-20:
                    # no descent at numerical resolution; stop here
                    cand, cand_obj = theta, obj
                    break
            theta, new_obj = cand, cand_obj
            if new_obj == obj and step < 1e-20:
                break
        if not np.isfinite(new_obj):
            raise FloatingPointError("objective diverged to a non-finite value")
        obj = new_obj
        grad = robust_gradient(theta, (x, y), config.epsilon, config.p)
        gnorm = float(np.linalg.norm(grad))
        converged = gnorm <= config.gradient_tolerance

    return TrainedModel(
        theta=theta, final_objective=obj, iterations_used=iterations,
        converged=converged, gradient_norm=gnorm,
    )


def kernel_component_ratio(theta, W):
    """||P_{Ker(W^T)} theta|| / ||theta||, in [0, 1]."""
    return float(np.sqrt(kernel_fraction(theta, W)))
