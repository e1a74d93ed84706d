"""Non-intrusive polynomial chaos surrogates.

A surrogate stores its coefficients in standardized coordinates ``z`` of an
independent input distribution (Gaussian or uniform per dimension), together
with that distribution, so evaluation accepts physical parameters ``y``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .polynomials import MultiIndexSet, PolynomialFamily, eval_multivariate
from .quadrature import QuadratureRule


class ModelEvaluationError(RuntimeError):
    """Forward model failure at a specific quadrature node."""

    def __init__(self, node, cause):
        self.node = np.asarray(node)
        super().__init__(f"forward model failed at y={self.node.tolist()}: {cause}")


@dataclass(frozen=True)
class InputDistribution:
    """Independent per-dimension marginals.

    ``kinds[j]`` is ``"normal"`` (``loc`` = mean, ``scale`` = std) or
    ``"uniform"`` (``loc`` = lower bound a, ``scale`` = upper bound b).
    """

    kinds: tuple
    loc: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        kinds = tuple(str(k) for k in self.kinds)
        loc = np.array(self.loc, dtype=float).ravel()
        scale = np.array(self.scale, dtype=float).ravel()
        if not (len(kinds) == loc.size == scale.size):
            raise ValueError("kinds/loc/scale lengths differ")
        for k, a, b in zip(kinds, loc, scale):
            if k == "normal":
                if not b > 0:
                    raise ValueError("normal marginals need sigma > 0")
            elif k == "uniform":
                if not a < b:
                    raise ValueError("uniform marginals need a < b")
            else:
                raise ValueError(f"unknown marginal kind {k!r}")
        loc.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def gaussian(cls, mean, std) -> "InputDistribution":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
        return cls(("normal",) * mean.size, mean, std)

    @classmethod
    def uniform(cls, lower, upper) -> "InputDistribution":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), lower.shape)
        return cls(("uniform",) * lower.size, lower, upper)

    @property
    def dim(self) -> int:
        return len(self.kinds)

    @property
    def _normal(self) -> np.ndarray:
        return np.array([k == "normal" for k in self.kinds])

    @property
    def families(self) -> list[PolynomialFamily]:
        return [PolynomialFamily.HERMITE if k == "normal" else PolynomialFamily.LEGENDRE
                for k in self.kinds]

    def _center_halfwidth(self):
        nrm = self._normal
        center = np.where(nrm, self.loc, 0.5 * (self.loc + self.scale))
        width = np.where(nrm, self.scale, 0.5 * (self.scale - self.loc))
        return center, width

    def to_standard(self, y) -> np.ndarray:
        center, width = self._center_halfwidth()
        return (np.asarray(y, dtype=float) - center) / width

    def from_standard(self, z) -> np.ndarray:
        center, width = self._center_halfwidth()
        return center + width * np.asarray(z, dtype=float)

    def mean(self) -> np.ndarray:
        return self._center_halfwidth()[0]

    def logpdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        nrm = self._normal
        out = np.zeros(y.shape[:-1])
        if nrm.any():
            m, s = self.loc[nrm], self.scale[nrm]
            z = (y[..., nrm] - m) / s
            out = out + np.sum(-0.5 * z**2 - np.log(s) - 0.5 * np.log(2 * np.pi), axis=-1)
        if (~nrm).any():
            a, b = self.loc[~nrm], self.scale[~nrm]
            yy = y[..., ~nrm]
            inside = np.all((yy >= a) & (yy <= b), axis=-1)
            out = np.where(inside, out - np.sum(np.log(b - a)), -np.inf)
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = np.empty((n, self.dim))
        nrm = self._normal
        z[:, nrm] = rng.standard_normal((n, int(nrm.sum())))
        z[:, ~nrm] = rng.uniform(-1.0, 1.0, (n, int((~nrm).sum())))
        return self.from_standard(z)


@dataclass
class PCSurrogate:
    """Truncated PC expansion of a vector-valued model.

    ``coefficients`` has shape (n_outputs, n_terms); column k multiplies the
    basis term ``index_set.indices[k]``.
    """

    index_set: MultiIndexSet
    coefficients: np.ndarray
    dist: InputDistribution
    n_model_evals: int = 0
    nodes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.coefficients = np.array(self.coefficients, dtype=float, ndmin=2)
        if self.coefficients.shape[1] != len(self.index_set):
            raise ValueError("coefficient columns must match the index set size")
        if self.index_set.dim != self.dist.dim:
            raise ValueError("index set and input distribution dimensions differ")

    @property
    def n_inputs(self) -> int:
        return self.dist.dim

    @property
    def n_outputs(self) -> int:
        return self.coefficients.shape[0]

    def basis(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} inputs, got {y.shape[-1]}")
        return eval_multivariate(self.index_set, self.dist.families, self.dist.to_standard(y))

    def evaluate(self, y) -> np.ndarray:
        """Surrogate prediction; ``y`` may be (n_y,) or (n_points, n_y)."""
        return self.basis(y) @ self.coefficients.T

    __call__ = evaluate

    def mean(self) -> np.ndarray:
        return self.coefficients[:, 0].copy()

    def variance(self) -> np.ndarray:
        return np.sum(self.coefficients[:, 1:] ** 2, axis=1)

    def save(self, path) -> None:
        save_surrogate(self, path)


def project(model, dist: InputDistribution, index_set: MultiIndexSet,
            rule: QuadratureRule, cache: dict | None = None) -> PCSurrogate:
    """Pseudo-spectral projection ``a_i = sum_m g(y_m) Psi_i(z_m) w_m``.

    ``rule`` lives in standardized coordinates of ``dist``. ``model`` maps a
    batch of physical points (n, n_y) to (n, n_d) through ``model.batch`` when
    present, otherwise it is called point by point. With ``cache`` (a dict), model
    outputs are memoized by physical node so repeated nodes cost nothing.
    """
    if rule.dim != dist.dim:
        raise ValueError("quadrature rule and distribution dimensions differ")
    z = rule.nodes
    y = dist.from_standard(z)
    values, n_evals = _evaluate_nodes(model, y, cache)
    psi = eval_multivariate(index_set, dist.families, z)
    coeffs = (values.T * rule.weights) @ psi
    return PCSurrogate(index_set, coeffs, dist, n_model_evals=n_evals, nodes=y)


def _evaluate_nodes(model, y: np.ndarray, cache: dict | None):
    todo = list(range(len(y)))
    out: list = [None] * len(y)
    if cache is not None:
        todo = []
        for m, node in enumerate(y):
            key = node.tobytes()
            if key in cache:
                out[m] = cache[key]
            else:
                todo.append(m)
    if todo:
        pts = y[todo]
        batch = getattr(model, "batch", None)
        try:
            if batch is not None:
                vals = np.asarray(batch(pts), dtype=float)
            else:
                vals = np.array([np.atleast_1d(model(p)) for p in pts], dtype=float)
        except Exception as exc:
            # locate the offending node
            for p in pts:
                try:
                    model(p)
                except Exception as inner:
                    raise ModelEvaluationError(p, inner) from inner
            raise ModelEvaluationError(pts[0], exc) from exc
        vals = vals.reshape(len(todo), -1)
        if not np.all(np.isfinite(vals)):
            bad = todo[int(np.argmax(~np.all(np.isfinite(vals), axis=1)))]
            raise ModelEvaluationError(y[bad], "non-finite output")
        for m, v in zip(todo, vals):
            out[m] = v
            if cache is not None:
                cache[y[m].tobytes()] = v
    return np.array(out, dtype=float), len(todo)


@dataclass
class L2Error:
    total: float
    per_output: np.ndarray
    stderr: float


def l2_error(surrogate: PCSurrogate, model, dist: InputDistribution, n_mc: int,
             seed=None) -> L2Error:
    """Monte Carlo estimate of ||surrogate - model|| in L2 of ``dist``.

    ``total`` is sqrt(E ||diff||^2) summed over outputs; ``per_output`` is the
    RMS error of each component. ``stderr`` comes from the delta method.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = np.random.default_rng(seed)
    y = dist.sample(rng, n_mc)
    batch = getattr(model, "batch", None)
    g = np.asarray(batch(y) if batch is not None else [model(p) for p in y], dtype=float)
    diff2 = (surrogate.evaluate(y) - g.reshape(n_mc, -1)) ** 2
    sq = diff2.sum(axis=1)
    ms = sq.mean()
    total = float(np.sqrt(ms))
    se_ms = sq.std(ddof=1) / np.sqrt(n_mc) if n_mc > 1 else np.inf
    stderr = float(se_ms / (2 * total)) if total > 0 else 0.0
    return L2Error(total, np.sqrt(diff2.mean(axis=0)), stderr)


_FAMILY_CODES = {"normal": "hermite", "uniform": "legendre"}


def save_surrogate(s: PCSurrogate, path) -> None:
    """Text serialization: header lines, then ``i_1 .. i_ny  a_1 .. a_nd`` per term."""
    lines = [
        "# pc-surrogate v1",
        f"# n_y {s.n_inputs}",
        f"# n_d {s.n_outputs}",
        f"# order {s.index_set.max_order}",
        f"# n_terms {len(s.index_set)}",
        f"# n_model_evals {s.n_model_evals}",
        "# families " + " ".join(_FAMILY_CODES[k] for k in s.dist.kinds),
        "# kinds " + " ".join(s.dist.kinds),
        "# loc " + " ".join(f"{v:.16e}" for v in s.dist.loc),
        "# scale " + " ".join(f"{v:.16e}" for v in s.dist.scale),
    ]
    for idx, row in zip(s.index_set.indices, s.coefficients.T):
        lines.append(" ".join(str(int(i)) for i in idx) + "\t"
                     + " ".join(f"{v:.16e}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_surrogate(path) -> PCSurrogate:
    header: dict[str, list[str]] = {}
    idx, coef = [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) >= 2:
                header[parts[0]] = parts[1:]
            continue
        left, right = line.split("\t")
        idx.append([int(v) for v in left.split()])
        coef.append([float(v) for v in right.split()])
    n_y = int(header["n_y"][0])
    dist = InputDistribution(tuple(header["kinds"]),
                             np.array(header["loc"], dtype=float),
                             np.array(header["scale"], dtype=float))
    iset = MultiIndexSet(np.array(idx, dtype=np.int64).reshape(-1, n_y))
    return PCSurrogate(iset, np.array(coef).T, dist,
                       n_model_evals=int(header.get("n_model_evals", ["0"])[0]))


def coefficient_energy(s: PCSurrogate, outputs: Sequence[int] | None = None) -> float:
    """Sum of squared coefficients (the surrogate's second moment)."""
    c = s.coefficients if outputs is None else s.coefficients[list(outputs)]
    return float(np.sum(c**2))
