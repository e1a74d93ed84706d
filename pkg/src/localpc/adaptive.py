"""Tempered cross-entropy construction of posterior-focused PC surrogates.

Each iteration builds a Hermite PC surrogate of the forward model with
respect to the current Gaussian biasing distribution p(y; v_k), draws an
importance-sampling batch from it, picks the next tempering level so that an
elite fraction of surrogate likelihoods reaches a fixed level, and refits
(mu, sigma) in closed form by weighted moments. The loop ends once an update
has been made at lambda = 1; a final surrogate is then built over the last
biasing distribution.

All likelihood arithmetic is in log space; weights are exponentiated after
subtracting the batch maximum.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bayes import GaussianLikelihood, Prior
from .polychaos import InputDistribution, PCSurrogate, project
from .polynomials import PolynomialFamily, total_order_set
from .quadrature import QuadratureRule, SparseGridSpec, gauss_rule, smolyak_rule, tensor_rule

log = logging.getLogger(__name__)

MIN_ESS = 10.0


class DegenerateBatchError(RuntimeError):
    """Importance weights collapsed (too few effective samples)."""


class MissedPosteriorError(RuntimeError):
    """Every elite likelihood underflowed to zero."""


@dataclass(frozen=True)
class BiasingParams:
    """Uncorrelated Gaussian p(y; v) with v = (mu, sigma)."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float)).copy()
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), mu.shape).copy()
        if np.any(~(sigma > 0)):
            raise ValueError("biasing standard deviations must be positive")
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.size

    def as_distribution(self) -> InputDistribution:
        return InputDistribution.gaussian(self.mu, self.sigma)

    def logpdf(self, y) -> np.ndarray:
        z = (np.asarray(y, dtype=float) - self.mu) / self.sigma
        return np.sum(-0.5 * z * z - np.log(self.sigma), axis=-1) - 0.5 * self.dim * np.log(2 * np.pi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mu + self.sigma * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class RuleSpec:
    """How to build the projection quadrature: full tensor Gauss or Smolyak."""

    kind: str = "smolyak"  # "smolyak" | "tensor"
    level: int = 3  # Smolyak level or tensor points per dimension
    rule: str = "gauss-hermite"

    def index_set(self, dim: int, order: int):
        """Total-order set, cut to what the rule resolves.

        A tensor Gauss rule with n points per dimension only keeps discrete
        orthonormality for per-dimension degrees <= n - 1.
        """
        iset = total_order_set(dim, order)
        if self.kind == "tensor":
            iset = iset.restrict(self.level - 1)
        return iset

    def build(self, dim: int) -> QuadratureRule:
        if self.kind == "tensor":
            one = gauss_rule(PolynomialFamily.HERMITE if self.rule == "gauss-hermite"
                             else PolynomialFamily.LEGENDRE, self.level)
            return tensor_rule([one] * dim)
        if self.kind == "smolyak":
            return smolyak_rule(SparseGridSpec(dim, self.level, self.rule))
        raise ValueError(f"unknown rule kind {self.kind!r}")


@dataclass(frozen=True)
class CEConfig:
    rho: float = 0.05
    gamma: float = 1e-3
    delta: float | None = None  # absolute minimum step; overrides delta_fraction
    delta_fraction: float = 0.1  # delta = fraction * (lambda_1 - 1)
    n_samples: int = 50_000
    max_iter: int = 50
    order: int = 2
    rule: RuleSpec = RuleSpec()
    final_order: int | None = None
    final_rule: RuleSpec | None = None
    sigma_min: float = 1e-6
    min_ess: float = MIN_ESS
    # likelihood level the elite quantile is measured against: "peak" (perfect
    # data fit, i.e. L / max_G L) or "batch" (best sample in the batch)
    lambda_reference: str = "peak"
    extra_passes: int = 0
    cache_model: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.delta_fraction > 0:
            raise ValueError("delta_fraction must be positive")
        if self.n_samples < 100:
            raise ValueError("need at least 100 importance samples")
        if self.order < 0 or self.max_iter < 1:
            raise ValueError("invalid order/max_iter")
        if self.lambda_reference not in ("peak", "batch"):
            raise ValueError("lambda_reference must be 'peak' or 'batch'")


@dataclass
class ISBatch:
    """Importance-sampling batch drawn from p(y; v_k).

    ``log_lik`` holds untempered surrogate log-likelihoods, ``log_weight`` the
    log density ratio log pi(y) - log p(y; v_k) (``-inf`` outside the prior support).
    """

    samples: np.ndarray
    log_lik: np.ndarray
    log_weight: np.ndarray

    def __len__(self):
        return self.samples.shape[0]


@dataclass
class TraceRow:
    k: int
    lam: float
    mu: np.ndarray
    sigma: np.ndarray
    ess: float
    model_evals: int
    lam_star: float = float("nan")


@dataclass
class CEResult:
    biasing: BiasingParams
    surrogate: PCSurrogate
    trace: list[TraceRow]
    model_evals: int
    iterations: int
    surrogates: list[PCSurrogate] = field(default_factory=list, repr=False)
    delta: float = float("nan")


def _log_weights(batch: ISBatch, lam: float):
    lw = batch.log_lik / lam + batch.log_weight
    finite = np.isfinite(lw)
    if not finite.any():
        raise DegenerateBatchError("all importance weights are zero")
    shift = lw[finite].max()
    w = np.where(finite, np.exp(lw - shift), 0.0)
    return w, shift


def effective_sample_size(w: np.ndarray) -> float:
    s = w.sum()
    return float(s * s / np.sum(w * w)) if s > 0 else 0.0


def objective_hat(batch: ISBatch, v: BiasingParams, lam: float) -> float:
    """Importance-sampling estimate of E_pi[L^(1/lam) ln p(y; v)].

    The tempered likelihood weights are divided by their batch maximum, so the
    value is the true estimate times a positive constant that does not depend
    on ``v``; the maximizer is unaffected.
    """
    w, _ = _log_weights(batch, lam)
    return float(np.sum(w * v.logpdf(batch.samples)) / len(batch))


def objective_hat_raw(batch: ISBatch, v: BiasingParams, lam: float) -> float:
    """Unscaled estimate (may underflow for sharp likelihoods)."""
    _, shift = _log_weights(batch, lam)
    return objective_hat(batch, v, lam) * math.exp(shift)


def update_lambda(log_lik, lam_k: float, rho: float, gamma: float, delta: float,
                  log_ref: float | None = 0.0) -> tuple[float, float]:
    """Next tempering value.

    ``log_lik`` are untempered surrogate log-likelihoods of the batch, taken
    relative to ``log_ref`` (``None`` means the batch maximum). The elite level
    L_rho is the order statistic at (1-based) position ceil((1-rho) M); solving
    L_rho^(1/lam) = gamma gives lam* = ln L_rho / ln gamma. lam* is then limited
    to lam_k - delta (skipped while lam_k is infinite) and floored at 1.

    Returns ``(lam_next, lam_star)``.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    ll = np.sort(np.asarray(log_lik, dtype=float).ravel())
    M = ll.size
    finite = ll[np.isfinite(ll)]
    if finite.size == 0:
        raise MissedPosteriorError("biasing distribution missed the posterior: no finite likelihoods")
    pos = min(max(math.ceil((1.0 - rho) * M), 1), M) - 1
    ref = finite.max() if log_ref is None else log_ref
    log_elite = ll[pos] - ref
    if not np.isfinite(log_elite):
        raise MissedPosteriorError(
            "biasing distribution missed the posterior: elite likelihood level is zero")
    lam_star = max(log_elite / math.log(gamma), 0.0)
    lam = lam_star
    if math.isfinite(lam_k) and lam > lam_k - delta:
        lam = lam_k - delta
    # repeated subtraction of delta can land a few ulps above 1
    if lam < 1.0 + 1e-12:
        lam = 1.0
    return lam, lam_star


def update_params(batch: ISBatch, lam: float, sigma_min: float = 1e-6,
                  min_ess: float = MIN_ESS) -> tuple[BiasingParams, float]:
    """Weighted mean and (population) standard deviation per dimension.

    Weights are L(y)^(1/lam) * pi(y)/p(y; v_k). Returns ``(params, ess)``.
    """
    w, _ = _log_weights(batch, lam)
    ess = effective_sample_size(w)
    if ess < min_ess:
        raise DegenerateBatchError(f"effective sample size {ess:.2f} below {min_ess:g}")
    wn = w / w.sum()
    mu = wn @ batch.samples
    var = wn @ (batch.samples - mu) ** 2
    sigma = np.maximum(np.sqrt(var), sigma_min)
    return BiasingParams(mu, sigma), ess


def peak_log_likelihood(lik) -> float:
    """Largest attainable log-likelihood (prediction equal to the data)."""
    return float(lik.log_likelihood(lik.data))


def build_surrogate(model, v: BiasingParams, order: int, rule: RuleSpec,
                    cache: dict | None = None) -> PCSurrogate:
    """Hermite PC surrogate of ``model`` with respect to p(y; v)."""
    dist = v.as_distribution()
    return project(model, dist, rule.index_set(v.dim, order), rule.build(v.dim), cache=cache)


def draw_batch(surrogate, prior: Prior, lik: GaussianLikelihood, v: BiasingParams,
               n: int, rng: np.random.Generator) -> ISBatch:
    y = v.sample(rng, n)
    lp = prior.logpdf(y)
    log_w = lp - v.logpdf(y)
    ll = np.asarray(lik.log_likelihood(surrogate.evaluate(y)), dtype=float)
    return ISBatch(y, ll, log_w)


def run(model, prior: Prior, lik: GaussianLikelihood, config: CEConfig,
        initial: BiasingParams) -> CEResult:
    """Run the adaptive loop from ``initial`` until an update at lambda = 1."""
    rng = np.random.default_rng(config.seed)
    cache: dict | None = {} if config.cache_model else None
    lam = math.inf
    v = initial
    delta = config.delta
    trace: list[TraceRow] = []
    surrogates: list[PCSurrogate] = []
    evals = 0
    passes_left = config.extra_passes
    log_ref = peak_log_likelihood(lik) if config.lambda_reference == "peak" else None
    k = 0
    while lam > 1.0 or passes_left > 0:
        if lam <= 1.0:
            passes_left -= 1
        if k >= config.max_iter:
            raise RuntimeError(f"adaptive loop exceeded {config.max_iter} iterations (lambda={lam:g})")
        sur = build_surrogate(model, v, config.order, config.rule, cache)
        surrogates.append(sur)
        evals += sur.n_model_evals
        batch = draw_batch(sur, prior, lik, v, config.n_samples, rng)
        if lam > 1.0:
            lam_next, lam_star = update_lambda(batch.log_lik, lam, config.rho, config.gamma,
                                               delta if delta is not None else 0.0, log_ref)
            if delta is None:
                delta = config.delta_fraction * (lam_next - 1.0) if lam_next > 1.0 else 1.0
        else:
            lam_next, lam_star = 1.0, float("nan")
        v, ess = update_params(batch, lam_next, config.sigma_min, config.min_ess)
        k += 1
        lam = lam_next
        trace.append(TraceRow(k, lam, v.mu.copy(), v.sigma.copy(), ess, evals, lam_star))
        log.info("iteration %d: lambda=%.6g ess=%.1f evals=%d", k, lam, ess, evals)
    final = build_surrogate(model, v, config.final_order if config.final_order is not None
                            else config.order, config.final_rule or config.rule, cache)
    evals += final.n_model_evals
    return CEResult(v, final, trace, evals, k, surrogates, delta if delta is not None else float("nan"))


def iteration_bound(lam_1: float, delta: float) -> int:
    """Maximum number of iterations once lambda_1 is known."""
    if lam_1 <= 1.0:
        return 1
    return math.ceil((lam_1 - 1.0) / delta) + 1


def save_trace(trace: list[TraceRow], path) -> None:
    """Tab-separated rows ``k lambda mu_1..mu_n sigma_1..sigma_n ESS cum_model_evals``."""
    if not trace:
        raise ValueError("empty trace")
    n = trace[0].mu.size
    cols = ["k", "lambda"] + [f"mu_{j + 1}" for j in range(n)] + \
           [f"sigma_{j + 1}" for j in range(n)] + ["ESS", "cum_model_evals"]
    lines = ["# " + "\t".join(cols)]
    for r in trace:
        vals = [str(r.k), f"{r.lam:.16e}"] + [f"{x:.16e}" for x in r.mu] + \
               [f"{x:.16e}" for x in r.sigma] + [f"{r.ess:.6f}", str(r.model_evals)]
        lines.append("\t".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trace(path) -> list[TraceRow]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        f = line.split("\t")
        n = (len(f) - 4) // 2
        rows.append(TraceRow(int(f[0]), float(f[1]), np.array(f[2:2 + n], dtype=float),
                             np.array(f[2 + n:2 + 2 * n], dtype=float), float(f[-2]), int(f[-1])))
    return rows


def save_biasing(v: BiasingParams, path) -> None:
    lines = ["# biasing distribution: independent Gaussians", "# j\tmu\tsigma"]
    lines += [f"{j + 1}\t{m:.16e}\t{s:.16e}" for j, (m, s) in enumerate(zip(v.mu, v.sigma))]
    Path(path).write_text("\n".join(lines) + "\n")


def load_biasing(path) -> BiasingParams:
    data = np.loadtxt(path, ndmin=2)
    return BiasingParams(data[:, 1], data[:, 2])


# ---------------------------------------------------------------------------
# empirical convergence of the estimator on a 1D Gaussian toy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyProblem:
    """pi = N(0, 1), G(y) = y + curvature * y^2, d | y ~ N(G(y), noise^2).

    Importance samples come from q = N(q_mean, q_std^2).
    """

    curvature: float = 0.3
    data: float = 0.8
    noise: float = 0.5
    q_mean: float = 0.4
    q_std: float = 1.2

    def forward(self, y):
        y = np.asarray(y, dtype=float)
        return y + self.curvature * y * y

    def likelihood(self, g):
        return np.exp(-0.5 * ((self.data - g) / self.noise) ** 2) / (self.noise * np.sqrt(2 * np.pi))

    def exact_objective(self, v: BiasingParams) -> float:
        """D(v) by adaptive 1D quadrature."""
        from scipy import integrate
        mu, s = float(v.mu[0]), float(v.sigma[0])

        def integrand(y):
            lp = -0.5 * ((y - mu) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)
            prior = np.exp(-0.5 * y * y) / np.sqrt(2 * np.pi)
            return self.likelihood(self.forward(y)) * lp * prior

        val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val


def empirical_convergence_check(toy: ToyProblem, sample_sizes=(1_000, 10_000, 100_000),
                                orders=(0, 1, 2), vs=None, n_rep: int = 20,
                                seed: int = 0) -> list[dict]:
    """Error of the surrogate-based estimate D_hat_N(v) against D(v).

    For every (M, N, v) the RMS error over ``n_rep`` independent batches is
    reported. Surrogates are built over q with a Gauss-Hermite rule of N+1 points.
    The same samples are shared across orders N.
    """
    if vs is None:
        vs = [BiasingParams([0.5], [0.6]), BiasingParams([0.2], [1.0]), BiasingParams([0.8], [0.4])]
    model_q = InputDistribution.gaussian([toy.q_mean], [toy.q_std])
    q = BiasingParams([toy.q_mean], [toy.q_std])
    exact = [toy.exact_objective(v) for v in vs]
    surr = {}
    for N in orders:
        rule = tensor_rule([gauss_rule(PolynomialFamily.HERMITE, N + 1)])
        surr[N] = project(lambda y: toy.forward(y), model_q, total_order_set(1, N), rule)
    rng = np.random.default_rng(seed)
    rows = []
    for M in sample_sizes:
        errs = {(N, i): [] for N in orders for i in range(len(vs))}
        for _ in range(n_rep):
            y = q.sample(rng, M)
            log_w = -0.5 * y[:, 0] ** 2 - 0.5 * np.log(2 * np.pi) - q.logpdf(y)
            for N in orders:
                L = toy.likelihood(surr[N].evaluate(y)[:, 0])
                for i, v in enumerate(vs):
                    est = np.mean(L * np.exp(log_w) * v.logpdf(y))
                    errs[(N, i)].append(est - exact[i])
        for N in orders:
            for i in range(len(vs)):
                e = np.asarray(errs[(N, i)])
                rows.append({"M": M, "N": N, "v": i, "exact": exact[i],
                             "rmse": float(np.sqrt(np.mean(e * e))),
                             "bias": float(e.mean()),
                             "se": float(e.std(ddof=1) / np.sqrt(len(e)))})
    return rows
