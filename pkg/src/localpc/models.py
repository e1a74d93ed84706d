"""Forward models: a generic wrapper, 2D contaminant source diffusion, and 1D
nonlinear heat conduction with a Fourier-parameterized boundary flux.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numba
import numpy as np


class SolverError(RuntimeError):
    """Numerical failure inside a forward solver."""


class ForwardModel:
    """Deterministic map from parameters (n_y,) to predictions (n_d,).

    Subclasses implement ``_batch``; ``__call__`` and ``batch`` count one
    evaluation per parameter vector. The counter is lock-protected.
    """

    n_inputs: int
    n_outputs: int

    def __init__(self):
        self._lock = threading.Lock()
        self.n_evals = 0

    def _count(self, n: int) -> None:
        with self._lock:
            self.n_evals += n

    def reset_counter(self) -> None:
        with self._lock:
            self.n_evals = 0

    def _batch(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def batch(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} inputs, got {y.shape[1]}")
        out = self._batch(y)
        self._count(y.shape[0])
        return out

    def __call__(self, y) -> np.ndarray:
        return self.batch(np.asarray(y, dtype=float)[None, :])[0]


class FunctionModel(ForwardModel):
    """Wrap a plain function. ``vectorized=True`` means ``fn`` maps (n, n_y) -> (n, n_d)."""

    def __init__(self, fn, n_inputs: int, n_outputs: int, vectorized: bool = False):
        super().__init__()
        self.fn = fn
        self.n_inputs = n_inputs
        self.n_outputs = n_outputs
        self.vectorized = vectorized

    def _batch(self, y):
        if self.vectorized:
            out = np.asarray(self.fn(y), dtype=float)
        else:
            out = np.array([np.atleast_1d(self.fn(p)) for p in y], dtype=float)
        return out.reshape(y.shape[0], self.n_outputs)


# ---------------------------------------------------------------------------
# contaminant source inversion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceModelConfig:
    strength: float = 2.0
    width: float = 0.05
    tau: float = 0.3
    sensors_1d: tuple = (0.0, 0.5, 1.0)
    times: tuple = (0.1, 0.2)
    n_nodes: int = 51
    dt: float = 5e-4

    def __post_init__(self):
        if self.width <= 0 or self.tau <= 0:
            raise ValueError("source width and tau must be positive")
        if self.n_nodes < 3 or self.dt <= 0:
            raise ValueError("invalid discretization")
        if any(t <= 0 for t in self.times):
            raise ValueError("measurement times must be positive")

    def refined(self, factor: int = 2) -> "SourceModelConfig":
        return replace(self, n_nodes=(self.n_nodes - 1) * factor + 1, dt=self.dt / factor)


def _neumann_modes(n: int):
    """Eigenvectors/eigenvalues of the node-centred Neumann Laplacian on [0, 1].

    With ghost-node reflection the 3-point Laplacian is diagonalized by
    V[i, k] = cos(pi k i / (n - 1)) with eigenvalues -mu_k.
    """
    h = 1.0 / (n - 1)
    i = np.arange(n)
    V = np.cos(np.pi * np.outer(i, i) / (n - 1))
    mu = (2.0 - 2.0 * np.cos(np.pi * i / (n - 1))) / h**2
    return V, np.linalg.inv(V), mu


def _interp_rows(V: np.ndarray, points) -> np.ndarray:
    """Rows of V linearly interpolated to coordinates in [0, 1]."""
    n = V.shape[0]
    s = np.clip(np.asarray(points, dtype=float), 0.0, 1.0) * (n - 1)
    i0 = np.minimum(np.floor(s).astype(int), n - 2)
    w = s - i0
    return (1 - w)[:, None] * V[i0] + w[:, None] * V[i0 + 1]


class SourceModel(ForwardModel):
    """Diffusion from a Gaussian source on [0, 1]^2 with insulated walls.

    Implicit Euler in time, second-order differences in space. The scheme is
    solved exactly in the eigenbasis of the discrete Neumann Laplacian: the
    forcing is constant on [0, tau], so each output time is a geometric sum of
    the implicit-step amplification factors. Outputs are ordered sensor-major
    (sensor index = a * n_sensors_1d + b for sensor (x_a, y_b)), time-minor.
    """

    n_inputs = 2

    def __init__(self, config: SourceModelConfig = SourceModelConfig()):
        super().__init__()
        self.config = config
        self.n_outputs = len(config.sensors_1d) ** 2 * len(config.times)
        n = config.n_nodes
        self.grid = np.linspace(0.0, 1.0, n)
        self._V, self._Vinv, mu = _neumann_modes(n)
        self._mu2 = mu[:, None] + mu[None, :]
        self._P = _interp_rows(self._V, config.sensors_1d)
        self._factors = np.stack([self._time_factor(t) for t in config.times])

    def _steps(self, t: float) -> int:
        n = int(round(t / self.config.dt))
        if abs(n * self.config.dt - t) > 1e-9 * max(1.0, t):
            raise SolverError(f"time {t} is not a multiple of dt={self.config.dt}")
        return n

    def _time_factor(self, t: float) -> np.ndarray:
        """dt * sum_{j=1}^{m} r^(N-j+1), with r = 1/(1 + dt mu), N = steps to t."""
        dt = self.config.dt
        N = self._steps(t)
        m = min(N, int(np.floor(self.config.tau / dt + 1e-9)))
        r = 1.0 / (1.0 + dt * self._mu2)
        with np.errstate(divide="ignore", invalid="ignore"):
            geo = np.where(r < 1.0, r ** (N - m + 1) * (1.0 - r**m) / (1.0 - r), float(m))
        return dt * geo

    def _source_profiles(self, y: np.ndarray):
        w = self.config.width
        g1 = np.exp(-(self.grid[None, :] - y[:, 0:1]) ** 2 / (2 * w * w)) / (np.sqrt(2 * np.pi) * w)
        g2 = np.exp(-(self.grid[None, :] - y[:, 1:2]) ** 2 / (2 * w * w)) / (np.sqrt(2 * np.pi) * w)
        return g1 @ self._Vinv.T, g2 @ self._Vinv.T

    def _batch(self, y):
        c1, c2 = self._source_profiles(y)
        x1 = self._P[None, :, :] * c1[:, None, :]  # (B, S, k1)
        x2 = self._P[None, :, :] * c2[:, None, :]  # (B, S, k2)
        tmp = np.einsum("bak,tkm->btam", x1, self._factors)
        out = np.einsum("btam,bcm->bact", tmp, x2) * self.config.strength
        return out.reshape(y.shape[0], -1)

    def field(self, y, t: float) -> np.ndarray:
        """Full concentration field at time ``t`` (n_nodes x n_nodes, [x_index, y_index])."""
        y = np.asarray(y, dtype=float)[None, :]
        c1, c2 = self._source_profiles(y)
        spec = np.outer(c1[0], c2[0]) * self._time_factor(t) * self.config.strength
        return self._V @ spec @ self._V.T


def source_forward(config: SourceModelConfig, x_src) -> np.ndarray:
    return SourceModel(config)(np.asarray(x_src, dtype=float))


# ---------------------------------------------------------------------------
# nonlinear heat conduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeatModelConfig:
    length: float = 1.0
    horizon: float = 1.0
    sensor: float = 0.4
    n_times: int = 50
    n_modes: int = 4
    n_nodes: int = 101
    dt: float = 1e-3
    linear: bool = False  # constant unit conductivity instead of 1/(1+u^2)
    scheme: str = "bdf2"  # or "euler"
    tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        if not 0 < self.sensor < self.length:
            raise ValueError("sensor must lie inside (0, L)")
        if self.n_nodes < 3 or self.dt <= 0 or self.n_times < 1:
            raise ValueError("invalid discretization")
        if self.scheme not in ("bdf2", "euler"):
            raise ValueError(f"unknown time scheme {self.scheme!r}")

    @property
    def n_params(self) -> int:
        return 2 * self.n_modes + 1

    @property
    def obs_times(self) -> np.ndarray:
        return self.horizon * np.arange(1, self.n_times + 1) / self.n_times

    def refined(self, factor: int = 2) -> "HeatModelConfig":
        return replace(self, n_nodes=(self.n_nodes - 1) * factor + 1, dt=self.dt / factor)


def flux_basis(t, n_modes: int = 4, horizon: float = 1.0) -> np.ndarray:
    """Fourier basis rows [1, cos(2 pi j t/T) .., sin(2 pi j t/T) ..] at times ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    j = np.arange(1, n_modes + 1)
    arg = 2.0 * np.pi * np.outer(t, j) / horizon
    return np.hstack([np.ones((t.size, 1)), np.cos(arg), np.sin(arg)])


def flux_eval(coeffs, t, horizon: float = 1.0):
    """q(t) = a_0 + sum_j a_j cos(2 j pi t/T) + b_j sin(2 j pi t/T).

    ``coeffs`` is (a_0, a_1..a_n, b_1..b_n), or a (n_samples, 2n+1) array.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    n_modes = (coeffs.shape[-1] - 1) // 2
    vals = coeffs @ flux_basis(t, n_modes, horizon).T
    return float(vals.ravel()[0]) if vals.size == 1 and np.ndim(t) == 0 and coeffs.ndim == 1 else vals


@numba.njit(cache=True)
def _conductivity(u, linear):
    if linear:
        return 1.0
    return 1.0 / (1.0 + u * u)


@numba.njit(cache=True)
def _heat_kernel(coeffs, n_modes, length, horizon, n_nodes, dt, n_steps, obs_steps,
                 i0, w, linear, bdf2, tol, max_iter, energy, boundary):
    B = coeffs.shape[0]
    n_obs = obs_steps.shape[0]
    out = np.zeros((B, n_obs))
    status = np.zeros(B, dtype=np.int64)
    h = length / (n_nodes - 1)
    u = np.empty(n_nodes)
    uprev = np.empty(n_nodes)
    uk = np.empty(n_nodes)
    unew = np.empty(n_nodes)
    cf = np.empty(n_nodes - 1)
    lo = np.empty(n_nodes)
    di = np.empty(n_nodes)
    up = np.empty(n_nodes)
    rhs = np.empty(n_nodes)
    base = np.empty(n_nodes)
    mass = np.empty(n_nodes)
    mass[:] = h
    mass[0] = 0.5 * h
    mass[n_nodes - 1] = 0.5 * h
    for b in range(B):
        u[:] = 0.0
        uprev[:] = 0.0
        k_obs = 0
        if energy.shape[0] > 0:
            energy[b, 0] = 0.0
            boundary[b, 0] = 0.0
        for n in range(1, n_steps + 1):
            t = n * dt
            q = coeffs[b, 0]
            for j in range(1, n_modes + 1):
                arg = 2.0 * np.pi * j * t / horizon
                q += coeffs[b, j] * np.cos(arg) + coeffs[b, n_modes + j] * np.sin(arg)
            # time derivative: diag * u^{n+1} - base
            if bdf2 and n > 1:
                alpha = 1.5 / dt
                for i in range(n_nodes):
                    base[i] = mass[i] * (2.0 * u[i] - 0.5 * uprev[i]) / dt
                    uk[i] = 2.0 * u[i] - uprev[i]
            else:
                alpha = 1.0 / dt
                for i in range(n_nodes):
                    base[i] = mass[i] * u[i] / dt
                    uk[i] = u[i]
            converged = False
            for it in range(max_iter):
                for i in range(n_nodes - 1):
                    cf[i] = _conductivity(0.5 * (uk[i] + uk[i + 1]), linear) / h
                c0 = _conductivity(uk[0], linear)
                for i in range(n_nodes):
                    di[i] = mass[i] * alpha
                    rhs[i] = base[i]
                    lo[i] = 0.0
                    up[i] = 0.0
                for i in range(n_nodes - 1):
                    di[i] += cf[i]
                    di[i + 1] += cf[i]
                    up[i] = -cf[i]
                    lo[i + 1] = -cf[i]
                rhs[0] -= c0 * q
                # Thomas algorithm
                for i in range(1, n_nodes):
                    m = lo[i] / di[i - 1]
                    di[i] -= m * up[i - 1]
                    rhs[i] -= m * rhs[i - 1]
                unew[n_nodes - 1] = rhs[n_nodes - 1] / di[n_nodes - 1]
                for i in range(n_nodes - 2, -1, -1):
                    unew[i] = (rhs[i] - up[i] * unew[i + 1]) / di[i]
                diff = 0.0
                for i in range(n_nodes):
                    d = abs(unew[i] - uk[i])
                    if d > diff:
                        diff = d
                    uk[i] = unew[i]
                if not np.isfinite(diff):
                    break
                if diff < tol or linear:
                    converged = True
                    break
            if not converged:
                status[b] = n
                break
            uprev[:] = u
            u[:] = uk
            if energy.shape[0] > 0:
                e = 0.0
                for i in range(n_nodes):
                    e += mass[i] * u[i]
                energy[b, n] = e
                boundary[b, n] = u[0]
            while k_obs < n_obs and obs_steps[k_obs] == n:
                out[b, k_obs] = (1.0 - w) * u[i0] + w * u[i0 + 1]
                k_obs += 1
    return out, status


class HeatModel(ForwardModel):
    """Nonlinear diffusion u_t = (c(u) u_x)_x, c(u) = 1/(1+u^2), on [0, L].

    Flux condition u_x(0, t) = q(t), insulated at x = L, zero initial state.
    Node-centred finite volumes with half cells at the boundaries. Time stepping
    is BDF2 (implicit Euler for the first step, or throughout with
    ``scheme="euler"``); the conductivity is lagged and iterated to ``tol``
    each step.
    Returns the temperature at the sensor (linear interpolation) at the
    ``n_times`` equally spaced times in (0, T].
    """

    def __init__(self, config: HeatModelConfig = HeatModelConfig()):
        super().__init__()
        self.config = config
        self.n_inputs = config.n_params
        self.n_outputs = config.n_times
        self._n_steps = int(round(config.horizon / config.dt))
        steps = np.rint(config.obs_times / config.dt).astype(np.int64)
        if np.any(np.abs(steps * config.dt - config.obs_times) > 1e-9):
            raise ValueError("observation times must be multiples of dt")
        self._obs_steps = steps
        s = config.sensor / config.length * (config.n_nodes - 1)
        self._i0 = min(int(np.floor(s)), config.n_nodes - 2)
        self._w = s - self._i0

    def _run(self, y, energy, boundary):
        c = self.config
        out, status = _heat_kernel(np.ascontiguousarray(y, dtype=float), c.n_modes, c.length,
                                   c.horizon, c.n_nodes, c.dt, self._n_steps, self._obs_steps,
                                   self._i0, self._w, c.linear, c.scheme == "bdf2", c.tol,
                                   c.max_iter, energy, boundary)
        bad = np.flatnonzero(status)
        if bad.size:
            b = bad[0]
            raise SolverError(
                f"conductivity iteration diverged at step {status[b]} (t={status[b] * c.dt:g}) "
                f"for coefficients {y[b].tolist()} on {c.n_nodes} nodes, dt={c.dt:g}")
        return out

    def _batch(self, y):
        return self._run(y, np.zeros((0, 0)), np.zeros((0, 0)))

    def energy_history(self, y) -> tuple[np.ndarray, np.ndarray]:
        """Trapezoidal integral of u and the boundary value u(0, t) at every step.

        Both arrays have length n_steps + 1 and start from the zero initial state.
        """
        y = np.atleast_2d(np.asarray(y, dtype=float))
        energy = np.zeros((1, self._n_steps + 1))
        boundary = np.zeros((1, self._n_steps + 1))
        self._run(y[:1], energy, boundary)
        return energy[0], boundary[0]

    @property
    def step_times(self) -> np.ndarray:
        return np.arange(self._n_steps + 1) * self.config.dt


def heat_forward(config: HeatModelConfig, coeffs) -> np.ndarray:
    return HeatModel(config)(np.asarray(coeffs, dtype=float))


def synthesize(model: ForwardModel, truth, noise_sigma: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Model output at ``truth`` plus i.i.d. Gaussian noise; returns (clean, noisy)."""
    clean = model(np.asarray(truth, dtype=float))
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(clean.shape) * noise_sigma if noise_sigma > 0 else 0.0
    return clean, clean + noise
