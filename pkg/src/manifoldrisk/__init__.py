"""Risk geometry of classifiers on low-dimensional latent manifolds.

Generative models of the form x = phi(W z) with Gaussian latents, their
Bayes-optimal classifiers, exact and Monte Carlo standard/adversarial/boundary
risk estimators with matching theoretical bounds, a robust ERM trainer, a
mixture-of-factor-analyzers image pipeline, and l2 gradient attacks, all
driven by a reproducible sweep CLI.
"""

__version__ = "0.1.0"

from . import attacks, classifiers, dataio, mfa, models, numerics, risk, training

__all__ = [
    "attacks",
    "classifiers",
    "dataio",
    "mfa",
    "models",
    "numerics",
    "risk",
    "training",
]
