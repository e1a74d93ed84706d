"""Metropolis-Hastings samplers and chain diagnostics.

Two samplers are provided: an independence sampler whose proposal is a fixed
Gaussian (typically the final biasing distribution of the adaptive loop), and
an adaptive random-walk Metropolis sampler with one delayed-rejection stage
(DRAM). Targets are callables returning unnormalized log densities; ``-inf``
marks points outside the support and is always rejected.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptive import BiasingParams

log = logging.getLogger(__name__)


@dataclass
class Chain:
    """Sample matrix plus per-step log target values and acceptance flags.

    ``samples[0]`` is the initial state; ``accepted[t]`` says whether the move
    into ``samples[t]`` was accepted (``accepted[0]`` is False).
    """

    samples: np.ndarray
    log_target: np.ndarray
    accepted: np.ndarray
    kind: str
    seed: int | None
    burn_in: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("chain samples must be finite")

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def acceptance_rate(self) -> float:
        """Fraction of accepted moves after burn-in."""
        acc = self.accepted[max(self.burn_in, 1):]
        return float(acc.mean()) if acc.size else float("nan")

    def kept(self) -> np.ndarray:
        """Samples after burn-in."""
        return self.samples[self.burn_in:]


def _eval_target(target, y: np.ndarray) -> np.ndarray:
    out = np.asarray(target(y), dtype=float)
    return np.broadcast_to(out, (y.shape[0],)) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# independence sampler
# ---------------------------------------------------------------------------

def independence_step(y, log_target_y: float, target, biasing: BiasingParams,
                      rng: np.random.Generator):
    """One independence-sampler move; returns ``(y_next, log_target_next, accepted)``."""
    prop = biasing.sample(rng, 1)[0]
    lt = float(_eval_target(target, prop[None, :])[0])
    log_alpha = lt - log_target_y + float(biasing.logpdf(y)) - float(biasing.logpdf(prop))
    if np.isfinite(lt) and np.log(rng.random()) < log_alpha:
        return prop, lt, True
    return np.asarray(y, dtype=float), log_target_y, False


def independence_sampler(target, biasing: BiasingParams, n_steps: int, seed=None,
                         y0=None, burn_in: int = 0, batch_size: int = 2000) -> Chain:
    """Independence Metropolis-Hastings with proposals from ``biasing``.

    Proposals do not depend on the state, so they are drawn and passed through
    ``target`` in batches of ``batch_size``; only the accept/reject sweep is
    sequential. The chain starts at ``y0`` (default: the proposal mean).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    d = biasing.dim
    y = np.array(biasing.mu if y0 is None else y0, dtype=float)
    lt = float(_eval_target(target, y[None, :])[0])
    if not np.isfinite(lt):
        raise ValueError("initial state has zero target density")
    lq = float(biasing.logpdf(y))
    samples = np.empty((n_steps, d))
    log_t = np.empty(n_steps)
    acc = np.zeros(n_steps, dtype=bool)
    samples[0], log_t[0] = y, lt
    t = 1
    while t < n_steps:
        m = min(batch_size, n_steps - t)
        props = biasing.sample(rng, m)
        u = np.log(rng.random(m))
        lt_p = _eval_target(target, props)
        lq_p = biasing.logpdf(props)
        for i in range(m):
            if np.isfinite(lt_p[i]) and u[i] < lt_p[i] - lt + lq - lq_p[i]:
                y, lt, lq = props[i], lt_p[i], lq_p[i]
                acc[t] = True
            samples[t], log_t[t] = y, lt
            t += 1
    return Chain(samples, log_t, acc, "independence", seed, burn_in,
                 {"mu": biasing.mu.tolist(), "sigma": biasing.sigma.tolist()})


# ---------------------------------------------------------------------------
# adaptive random walk with delayed rejection
# ---------------------------------------------------------------------------

def _chol(cov: np.ndarray, jitter: float = 1e-10) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    scale = max(float(np.trace(cov)) / cov.shape[0], 1e-300)
    eps = 0.0
    for _ in range(12):
        try:
            return np.linalg.cholesky(cov + eps * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            eps = jitter * scale if eps == 0.0 else eps * 10.0
            log.warning("proposal covariance not positive definite; adding jitter %.3g", eps)
    raise np.linalg.LinAlgError("proposal covariance could not be regularized")


def _log_mvn_kernel(diff: np.ndarray, chol: np.ndarray) -> float:
    """Gaussian log kernel -|L^{-1} diff|^2 / 2 (normalizer cancels in DR ratios)."""
    z = np.linalg.solve(chol, diff) if chol.ndim == 2 else diff / chol
    return -0.5 * float(z @ z)


def random_walk_step(y, log_target_y: float, target, chol: np.ndarray,
                     rng: np.random.Generator, dr_stages: int = 1, dr_scale: float = 0.5):
    """One Gaussian random-walk Metropolis move with optional delayed rejection.

    ``chol`` is the Cholesky factor of the first-stage proposal covariance; the
    second stage (``dr_stages=1``) proposes with ``chol * dr_scale`` (covariance
    times ``dr_scale**2``) and uses the Tierney-Mira acceptance correction.
    Returns ``(y_next, log_target_next, accepted, stage)`` with ``stage`` 0 on
    rejection.
    """
    y = np.asarray(y, dtype=float)
    d = y.size
    y1 = y + chol @ rng.standard_normal(d)
    l1 = float(_eval_target(target, y1[None, :])[0])
    a1 = l1 - log_target_y if np.isfinite(l1) else -np.inf
    if np.log(rng.random()) < a1:
        return y1, l1, True, 1
    if dr_stages < 1:
        return y, log_target_y, False, 0
    y2 = y + dr_scale * (chol @ rng.standard_normal(d))
    l2 = float(_eval_target(target, y2[None, :])[0])
    if not np.isfinite(l2):
        return y, log_target_y, False, 0
    # alpha_1 evaluated backwards from y2 towards y1
    a1_rev = min(0.0, l1 - l2) if np.isfinite(l1) else -np.inf
    num = l2 + _log_mvn_kernel(y1 - y2, chol) + _log1mexp(a1_rev)
    den = log_target_y + _log_mvn_kernel(y1 - y, chol) + _log1mexp(min(0.0, a1))
    if np.log(rng.random()) < num - den:
        return y2, l2, True, 2
    return y, log_target_y, False, 0


def _log1mexp(a: float) -> float:
    """log(1 - exp(a)) for a <= 0."""
    if a == -np.inf:
        return 0.0
    if a >= 0.0:
        return -np.inf
    return math.log(-math.expm1(a)) if a > -0.693 else math.log1p(-math.exp(a))


def dram(target, y0, cov0, n_steps: int, seed=None, adapt: bool = True, dr_stages: int = 1,
         scale: float | None = None, adapt_start: int = 1000, adapt_interval: int = 100,
         dr_shrink: float = 0.25, burn_in: int = 0) -> Chain:
    """Adaptive Metropolis with one delayed-rejection stage.

    After ``adapt_start`` steps, and then every ``adapt_interval`` steps, the
    proposal covariance is reset to ``scale * (C + 1e-10 I)`` with C the sample
    covariance of the chain so far and ``scale = 2.38**2 / d`` by default. The
    delayed-rejection proposal covariance is the current one times ``dr_shrink``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.default_rng(seed)
    y = np.array(y0, dtype=float).ravel()
    d = y.size
    cov = np.array(cov0, dtype=float).reshape(d, d)
    if not np.allclose(cov, cov.T):
        raise ValueError("proposal covariance must be symmetric")
    sd = 2.38**2 / d if scale is None else scale
    chol = _chol(cov)
    dr_scale = math.sqrt(dr_shrink)
    lt = float(_eval_target(target, y[None, :])[0])
    if not np.isfinite(lt):
        raise ValueError("initial state has zero target density")
    samples = np.empty((n_steps, d))
    log_t = np.empty(n_steps)
    acc = np.zeros(n_steps, dtype=bool)
    samples[0], log_t[0] = y, lt
    s1 = y.copy()
    s2 = np.outer(y, y)
    for t in range(1, n_steps):
        y, lt, acc[t], _ = random_walk_step(y, lt, target, chol, rng, dr_stages, dr_scale)
        samples[t], log_t[t] = y, lt
        s1 += y
        s2 += np.outer(y, y)
        n = t + 1
        if adapt and n >= adapt_start and (n - adapt_start) % adapt_interval == 0:
            mean = s1 / n
            c = (s2 - n * np.outer(mean, mean)) / (n - 1)
            chol = _chol(sd * (c + 1e-10 * np.eye(d)))
    return Chain(samples, log_t, acc, "dram" if dr_stages else "am", seed, burn_in,
                 {"scale": sd, "adapt": adapt, "dr_stages": dr_stages, "dr_shrink": dr_shrink,
                  "adapt_start": adapt_start, "adapt_interval": adapt_interval,
                  "final_cov": (chol @ chol.T).tolist()})


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Normalized empirical autocorrelation for lags 0..max_lag (FFT based)."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if not 0 <= max_lag < n:
        raise ValueError("need 0 <= max_lag < chain length")
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:max_lag + 1] / n
    if acov[0] <= 0.0:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out
    out = acov / acov[0]
    out[0] = 1.0
    return out


def ess(x) -> float:
    """Effective sample size n / (1 + 2 sum rho) with Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 2 or np.ptp(x) == 0.0:
        return 0.0
    rho = autocorrelation(x, n - 1)
    n_pairs = (n - 1) // 2
    gamma = rho[0:2 * n_pairs:2] + rho[1:2 * n_pairs:2]
    neg = np.flatnonzero(gamma <= 0.0)
    m = neg[0] if neg.size else gamma.size
    tau = -1.0 + 2.0 * float(np.sum(gamma[:m]))
    return float(n / max(tau, 1e-12))


def first_lag_below(rho: np.ndarray, level: float = 0.1) -> int:
    """Smallest lag whose autocorrelation is below ``level`` (len(rho) if none)."""
    idx = np.flatnonzero(np.asarray(rho) < level)
    return int(idx[0]) if idx.size else len(rho)


# ---------------------------------------------------------------------------
# chain files
# ---------------------------------------------------------------------------

def save_chain(chain: Chain, path, names=None) -> Path:
    """Write samples (tab-separated, header row of names) and ``<path>.meta``."""
    path = Path(path)
    names = list(names) if names is not None else [f"y{j + 1}" for j in range(chain.dim)]
    if len(names) != chain.dim:
        raise ValueError("one name per chain dimension required")
    header = "\t".join(names + ["log_target", "accepted"])
    data = np.column_stack([chain.samples, chain.log_target, chain.accepted.astype(float)])
    fmt = ["%.16e"] * (chain.dim + 1) + ["%d"]
    np.savetxt(path, data, fmt=fmt, delimiter="\t", header=header, comments="# ")
    meta = {"kind": chain.kind, "seed": chain.seed, "n_steps": chain.n_steps,
            "burn_in": chain.burn_in, "acceptance_rate": chain.acceptance_rate,
            "params": chain.params}
    meta_path = path.with_name(path.name + ".meta")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta_path


def load_chain(path) -> tuple[Chain, list[str]]:
    path = Path(path)
    with open(path) as fh:
        names = fh.readline().lstrip("#").split()
    data = np.loadtxt(path, ndmin=2)
    meta_path = path.with_name(path.name + ".meta")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    chain = Chain(data[:, :-2], data[:, -2], data[:, -1].astype(bool), meta.get("kind", "unknown"),
                  meta.get("seed"), int(meta.get("burn_in", 0)), meta.get("params", {}))
    return chain, names[:-2]
