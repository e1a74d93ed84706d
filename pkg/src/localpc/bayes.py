"""Priors, Gaussian likelihoods, tempering and posterior log-densities.

Likelihoods include the full Gaussian normalizing constant,

    log L(g) = -sum_i (d_i - g_i)^2 / (2 sigma_i^2) - sum_i log(sigma_i sqrt(2 pi)),

so tempering by 1/lambda scales the whole log-density.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polychaos import InputDistribution


class Prior:
    """Independent uniform or Gaussian marginals."""

    def __init__(self, dist: InputDistribution):
        self.dist = dist

    @classmethod
    def uniform(cls, lower, upper) -> "Prior":
        return cls(InputDistribution.uniform(lower, upper))

    @classmethod
    def gaussian(cls, mean, variance) -> "Prior":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        var = np.broadcast_to(np.asarray(variance, dtype=float), mean.shape)
        return cls(InputDistribution.gaussian(mean, np.sqrt(var)))

    @property
    def dim(self) -> int:
        return self.dist.dim

    def logpdf(self, y) -> np.ndarray:
        """Log density; ``-inf`` outside the support."""
        return self.dist.logpdf(y)

    def in_support(self, y) -> np.ndarray:
        return np.isfinite(self.logpdf(y))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.dist.sample(rng, n)

    def mean(self) -> np.ndarray:
        return self.dist.mean()

    def std(self) -> np.ndarray:
        center, width = self.dist._center_halfwidth()
        return np.where(self.dist._normal, width, width / np.sqrt(3.0))

    def __repr__(self):
        return f"Prior({', '.join(self.dist.kinds)})"


class GaussianLikelihood:
    """Additive i.i.d. Gaussian noise model around a data vector."""

    def __init__(self, data, sigma):
        self.data = np.asarray(data, dtype=float).ravel()
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=float), self.data.shape).copy()
        if np.any(self.sigma <= 0):
            raise ValueError("noise standard deviation must be positive")
        self.log_norm = -float(np.sum(np.log(self.sigma * np.sqrt(2.0 * np.pi))))

    @property
    def n_data(self) -> int:
        return self.data.size

    def log_likelihood(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape[-1] != self.data.size:
            raise ValueError(f"prediction has {g.shape[-1]} entries, data has {self.data.size}")
        r = (self.data - g) / self.sigma
        return self.log_norm - 0.5 * np.sum(r * r, axis=-1)

    __call__ = log_likelihood


@dataclass(frozen=True)
class TemperedLikelihood:
    base: GaussianLikelihood
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam >= 1.0:
            raise ValueError(f"tempering parameter must be >= 1, got {self.lam}")

    def log_likelihood(self, g) -> np.ndarray:
        return log_tempered(self, g)


def log_likelihood(lik: GaussianLikelihood, g) -> np.ndarray:
    return lik.log_likelihood(g)


def log_tempered(lik: TemperedLikelihood, g) -> np.ndarray:
    base = lik.base.log_likelihood(g)
    if lik.lam == 1.0:
        return base
    return base / lik.lam


def _forward(model, y: np.ndarray) -> np.ndarray:
    batch = getattr(model, "batch", None)
    if batch is not None:
        return np.asarray(batch(y), dtype=float)
    evaluate = getattr(model, "evaluate", None)
    if evaluate is not None:
        return np.asarray(evaluate(y), dtype=float)
    return np.array([np.atleast_1d(model(p)) for p in y], dtype=float)


def log_posterior_unnormalized(prior: Prior, lik, model, y) -> np.ndarray:
    """log L(G(y)) + log pi(y); the model is only evaluated inside the prior support."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = np.atleast_2d(y)
    lp = prior.logpdf(pts)
    out = np.full(pts.shape[0], -np.inf)
    ok = np.isfinite(lp)
    if ok.any():
        g = _forward(model, pts[ok])
        out[ok] = lik.log_likelihood(g) + lp[ok]
    return out[0] if single else out


class Posterior:
    """Unnormalized log posterior ``y -> log L(G(y)) + log pi(y)`` for samplers."""

    def __init__(self, prior: Prior, lik, model):
        self.prior = prior
        self.lik = lik
        self.model = model

    @property
    def dim(self) -> int:
        return self.prior.dim

    def __call__(self, y):
        return log_posterior_unnormalized(self.prior, self.lik, self.model, y)


def log_evidence_estimate(prior: Prior, lik, surrogate, n_mc: int, seed=None) -> tuple[float, float]:
    """Prior-sampling Monte Carlo estimate of log I = log E_prior[L(G(y))].

    Returns ``(log_I, se)`` where ``se`` is the delta-method standard error of
    the log estimate.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    y = prior.sample(rng, n_mc)
    ll = np.asarray(lik.log_likelihood(_forward(surrogate, y)), dtype=float)
    shift = ll.max()
    w = np.exp(ll - shift)
    mean = w.mean()
    se = w.std(ddof=1) / np.sqrt(n_mc) / mean if n_mc > 1 else np.inf
    return float(np.log(mean) + shift), float(se)
