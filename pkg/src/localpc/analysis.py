"""Posterior summaries: 2D kernel density estimates, KL divergences between
sample-based or gridded densities, and moments of the reconstructed heat flux.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .models import flux_basis

LOG_FLOOR = 1e-300
_CHUNK = 20_000


class CoverageError(ValueError):
    """The evaluation grid misses too much sample mass."""


@dataclass(frozen=True)
class Grid2D:
    x: np.ndarray
    y: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.size, self.y.size

    def contains(self, samples) -> np.ndarray:
        s = np.asarray(samples, dtype=float)
        return ((s[:, 0] >= self.x[0]) & (s[:, 0] <= self.x[-1])
                & (s[:, 1] >= self.y[0]) & (s[:, 1] <= self.y[-1]))


@dataclass
class KDE2D:
    """Gaussian product-kernel density on a grid, indexed ``density[ix, iy]``."""

    grid: Grid2D
    density: np.ndarray
    bandwidth: np.ndarray
    n_samples: int
    coverage: float

    def integral(self) -> float:
        return integrate_grid(self.grid, self.density)


def integrate_grid(grid: Grid2D, values: np.ndarray) -> float:
    return float(trapezoid(trapezoid(values, grid.y, axis=1), grid.x))


def silverman_bandwidth(samples) -> np.ndarray:
    """Per-dimension 1.06 * std * n^(-1/6) (2D rate)."""
    s = np.asarray(samples, dtype=float)
    sd = s.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise ValueError("samples have zero variance in some dimension")
    return 1.06 * sd * s.shape[0] ** (-1.0 / 6.0)


def make_grid(*sample_sets, n: int = 200, pad: float = 3.0) -> Grid2D:
    """Grid spanning the union of the sample ranges, padded by ``pad`` bandwidths."""
    lo = np.min([np.min(s, axis=0) for s in sample_sets], axis=0)
    hi = np.max([np.max(s, axis=0) for s in sample_sets], axis=0)
    h = np.max([silverman_bandwidth(s) for s in sample_sets], axis=0)
    lo, hi = lo - pad * h, hi + pad * h
    return Grid2D(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))


def _kernel_matrix(points: np.ndarray, centers: np.ndarray, h: float) -> np.ndarray:
    z = (points[:, None] - centers[None, :]) / h
    return np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * h)


def kde2(samples, grid: Grid2D | None = None, bandwidth=None) -> KDE2D:
    """Gaussian product-kernel estimate evaluated exactly at every grid node."""
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[1] != 2:
        raise ValueError("kde2 needs an (n, 2) sample array")
    if s.shape[0] < 100:
        raise ValueError("need at least 100 samples")
    h = silverman_bandwidth(s) if bandwidth is None else np.asarray(bandwidth, dtype=float)
    if grid is None:
        grid = make_grid(s)
    dens = np.zeros(grid.shape)
    for start in range(0, s.shape[0], _CHUNK):
        part = s[start:start + _CHUNK]
        kx = _kernel_matrix(part[:, 0], grid.x, h[0])
        ky = _kernel_matrix(part[:, 1], grid.y, h[1])
        dens += kx.T @ ky
    dens /= s.shape[0]
    coverage = float(grid.contains(s).mean())
    return KDE2D(grid, dens, h, s.shape[0], coverage)


def kl_grid(p: np.ndarray, q: np.ndarray, grid: Grid2D, normalize: bool = True) -> float:
    """Trapezoidal integral of p log(p/q); densities floored at 1e-300 inside the log."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if normalize:
        p = p / integrate_grid(grid, p)
        q = q / integrate_grid(grid, q)
    integrand = p * (np.log(np.maximum(p, LOG_FLOOR)) - np.log(np.maximum(q, LOG_FLOOR)))
    return integrate_grid(grid, integrand)


def kl_from_log_densities(log_p: np.ndarray, log_q: np.ndarray, grid: Grid2D) -> float:
    """KL between two unnormalized log densities tabulated on ``grid``."""
    p = np.exp(log_p - np.max(log_p))
    q = np.exp(log_q - np.max(log_q))
    return kl_grid(p, q, grid)


@dataclass
class KLResult:
    value: float
    stderr: float
    grid: Grid2D
    coverage: tuple[float, float]


def kl_divergence_2d(p_samples, q_samples, grid: Grid2D | None = None, n_boot: int = 20,
                     seed=0, min_coverage: float = 0.999) -> KLResult:
    """KL(p || q) between KDEs of two 2D sample sets, with bootstrap standard error.

    Each bootstrap replicate resamples both sets with replacement and recomputes
    both estimates on the same grid.
    """
    p_s = np.asarray(p_samples, dtype=float)
    q_s = np.asarray(q_samples, dtype=float)
    if grid is None:
        grid = make_grid(p_s, q_s)
    cov = (float(grid.contains(p_s).mean()), float(grid.contains(q_s).mean()))
    if min(cov) < min_coverage:
        raise CoverageError(f"grid covers only {min(cov):.4%} of the sample mass")
    value = kl_grid(kde2(p_s, grid).density, kde2(q_s, grid).density, grid)
    rng = np.random.default_rng(seed)
    reps = []
    for _ in range(n_boot):
        pb = p_s[rng.integers(0, len(p_s), len(p_s))]
        qb = q_s[rng.integers(0, len(q_s), len(q_s))]
        reps.append(kl_grid(kde2(pb, grid).density, kde2(qb, grid).density, grid))
    se = float(np.std(reps, ddof=1)) if n_boot > 1 else float("nan")
    return KLResult(value, se, grid, cov)


# ---------------------------------------------------------------------------
# flux moments
# ---------------------------------------------------------------------------

@dataclass
class FluxMoments:
    t: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray
    autocov: np.ndarray


def _moments(q: np.ndarray):
    mean = q.mean(axis=0)
    c = q - mean
    var = np.mean(c * c, axis=0)
    # spread at roundoff level of the values themselves counts as none
    tiny = (1e-12 * np.max(np.abs(q), axis=0)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(var > tiny, np.mean(c**3, axis=0) / var**1.5, 0.0)
    return mean, var, skew, c


def flux_samples(coeff_samples, t, horizon: float = 1.0) -> np.ndarray:
    coeffs = np.asarray(coeff_samples, dtype=float)
    n_modes = (coeffs.shape[1] - 1) // 2
    return coeffs @ flux_basis(t, n_modes, horizon).T


def flux_moments(coeff_samples, t, horizon: float = 1.0) -> FluxMoments:
    """Pointwise mean, variance, skewness and the autocovariance of q(t)."""
    coeffs = np.asarray(coeff_samples, dtype=float)
    if coeffs.shape[0] < 1000:
        raise ValueError("need at least 1000 samples")
    t = np.asarray(t, dtype=float)
    q = flux_samples(coeffs, t, horizon)
    mean, var, skew, c = _moments(q)
    autocov = c.T @ c / q.shape[0]
    return FluxMoments(t, mean, var, skew, autocov)


def batch_means_se(coeff_samples, t, n_batches: int = 50, horizon: float = 1.0):
    """Batch-means standard errors of the flux mean, variance and skewness.

    The chain is cut into ``n_batches`` contiguous batches; each statistic is
    computed per batch and the spread of batch values gives the SE of the
    full-chain statistic, accounting for autocorrelation.
    """
    q = flux_samples(coeff_samples, t, horizon)
    b = q.shape[0] // n_batches
    if b < 2:
        raise ValueError("too few samples per batch")
    stats = np.array([_moments(q[i * b:(i + 1) * b])[:3] for i in range(n_batches)])
    se = stats.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return se[0], se[1], se[2]


# ---------------------------------------------------------------------------
# text outputs
# ---------------------------------------------------------------------------

def write_kde(kde: KDE2D, path, names=("x", "y")) -> None:
    X, Y = np.meshgrid(kde.grid.x, kde.grid.y, indexing="ij")
    header = (f"bandwidth {kde.bandwidth[0]:.6e} {kde.bandwidth[1]:.6e}  coverage {kde.coverage:.6f}"
              f"  n {kde.n_samples}\n{names[0]}\t{names[1]}\tdensity")
    np.savetxt(path, np.column_stack([X.ravel(), Y.ravel(), kde.density.ravel()]),
               fmt="%.10e", delimiter="\t", header=header, comments="# ")


def write_moments(m: FluxMoments, path, se=None) -> None:
    cols = [m.t, m.mean, m.variance, m.skewness]
    header = "t\tmean\tvar\tskew"
    if se is not None:
        cols += list(se)
        header += "\tse_mean\tse_var\tse_skew"
    np.savetxt(path, np.column_stack(cols), fmt="%.10e", delimiter="\t", header=header,
               comments="# ")


def write_matrix(mat: np.ndarray, path, header: str = "") -> None:
    np.savetxt(path, mat, fmt="%.10e", delimiter="\t", header=header, comments="# ")


def write_table(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("empty table")
    keys = list(rows[0])
    lines = ["# " + "\t".join(keys)]
    for r in rows:
        lines.append("\t".join(f"{r[k]:.6e}" if isinstance(r[k], float) else str(r[k])
                               for k in keys))
    Path(path).write_text("\n".join(lines) + "\n")
