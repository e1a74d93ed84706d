"""Gauss, Clenshaw-Curtis, tensor-product and Smolyak quadrature rules.

All rules are normalized against a probability density: weights sum to one
and integrate against N(0, 1) (Hermite) or U(-1, 1) (Legendre,
Clenshaw-Curtis) in every coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from .polynomials import PolynomialFamily, recurrence

MERGE_TOL = 1e-12

RULE_KINDS = ("gauss-hermite", "gauss-legendre", "clenshaw-curtis")


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray  # (n_nodes, dim)
    weights: np.ndarray  # (n_nodes,)
    description: str = ""

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float, ndmin=2)
        if nodes.shape[0] == 1 and np.ndim(self.nodes) == 1:
            nodes = nodes.T
        weights = np.array(self.weights, dtype=float).ravel()
        if nodes.shape[0] != weights.shape[0]:
            raise ValueError("nodes and weights disagree in length")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.weights.shape[0]

    def integrate(self, f) -> np.ndarray:
        """Apply the rule to ``f``, which maps (n_nodes, dim) -> (n_nodes, ...)."""
        vals = np.asarray(f(self.nodes), dtype=float)
        return np.tensordot(self.weights, vals, axes=(0, 0))


@dataclass(frozen=True)
class SparseGridSpec:
    """Smolyak construction: dimension, level, 1D rule kind and growth."""

    dim: int
    level: int
    rule: str = "gauss-hermite"
    growth: str = field(default="")

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.level < 1:
            raise ValueError("level must be >= 1")
        if self.rule not in RULE_KINDS:
            raise ValueError(f"unknown 1D rule {self.rule!r}; choose from {RULE_KINDS}")
        if not self.growth:
            object.__setattr__(self, "growth",
                               "doubling" if self.rule == "clenshaw-curtis" else "linear")
        if self.growth not in ("linear", "doubling"):
            raise ValueError(f"unknown growth rule {self.growth!r}")


def points_at_level(level: int, growth: str) -> int:
    """1D node count at a level: ``level`` (linear) or 2**(level-1)+1 (doubling)."""
    if level < 1:
        raise ValueError("level must be >= 1")
    if growth == "linear":
        return level
    if growth == "doubling":
        return 1 if level == 1 else 2 ** (level - 1) + 1
    raise ValueError(f"unknown growth rule {growth!r}")


def gauss_rule(family: PolynomialFamily, n_points: int) -> QuadratureRule:
    """Gauss rule for the family's weight density (Golub-Welsch).

    Exact for polynomials of degree <= 2 * n_points - 1.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    family = PolynomialFamily.parse(family)
    a, b = recurrence(family, n_points)
    jacobi = np.diag(a) + np.diag(b[1:n_points], 1) + np.diag(b[1:n_points], -1)
    nodes, vecs = np.linalg.eigh(jacobi)
    weights = vecs[0, :] ** 2
    # symmetric weight densities: clean up roundoff so the rule is exactly symmetric
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    if n_points % 2 == 1:
        nodes[n_points // 2] = 0.0
    weights = weights / weights.sum()
    return QuadratureRule(nodes[:, None], weights, f"gauss-{family.value}({n_points})")


def clenshaw_curtis_rule(n_points: int) -> QuadratureRule:
    """Clenshaw-Curtis rule for U(-1, 1); nodes ascending."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if n_points == 1:
        return QuadratureRule(np.zeros((1, 1)), np.ones(1), "clenshaw-curtis(1)")
    n = n_points - 1
    theta = np.pi * np.arange(n_points) / n
    nodes = -np.cos(theta)
    weights = np.ones(n_points)
    for j in range(1, n // 2 + 1):
        bj = 1.0 if 2 * j == n else 2.0
        weights -= bj * np.cos(2 * j * theta) / (4 * j * j - 1)
    weights *= 2.0 / n
    weights[0] /= 2.0
    weights[-1] /= 2.0
    nodes[np.abs(nodes) < 1e-15] = 0.0
    # normalize to the uniform probability density on [-1, 1]
    return QuadratureRule(nodes[:, None], weights / 2.0, f"clenshaw-curtis({n_points})")


def rule_1d(kind: str, n_points: int) -> QuadratureRule:
    if kind == "gauss-hermite":
        return gauss_rule(PolynomialFamily.HERMITE, n_points)
    if kind == "gauss-legendre":
        return gauss_rule(PolynomialFamily.LEGENDRE, n_points)
    if kind == "clenshaw-curtis":
        return clenshaw_curtis_rule(n_points)
    raise ValueError(f"unknown 1D rule {kind!r}")


def tensor_rule(per_dim: Sequence[QuadratureRule]) -> QuadratureRule:
    """Full Cartesian product of 1D rules; the first dimension varies slowest."""
    if len(per_dim) == 0:
        raise ValueError("need at least one dimension")
    for r in per_dim:
        if r.dim != 1:
            raise ValueError("tensor_rule expects 1D rules")
    grids = np.meshgrid(*[r.nodes[:, 0] for r in per_dim], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*[r.weights for r in per_dim], indexing="ij")
    weights = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1)
    desc = " x ".join(r.description for r in per_dim)
    return QuadratureRule(nodes, weights, desc)


def merge_duplicates(nodes: np.ndarray, weights: np.ndarray, tol: float = MERGE_TOL,
                     drop_tol: float = 1e-14):
    """Merge nodes closer than ``tol`` (summing weights); order of first appearance kept.

    Nodes whose merged weight vanishes relative to the largest weight are dropped,
    since they contribute nothing and would cost a model evaluation.
    """
    keys = np.round(nodes / tol).astype(np.int64) if tol > 0 else nodes
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    summed = np.zeros(first.shape[0])
    np.add.at(summed, inverse, weights)
    order = np.argsort(first, kind="stable")
    merged_nodes = nodes[first[order]]
    merged_weights = summed[order]
    keep = np.abs(merged_weights) > drop_tol * np.abs(merged_weights).max()
    return merged_nodes[keep], merged_weights[keep]


def _levels(dim: int, total_lo: int, total_hi: int):
    """Multi-levels l (entries >= 1) with total_lo <= |l| <= total_hi, deterministic order."""
    for total in range(total_lo, total_hi + 1):
        for comp in _compositions_pos(total, dim):
            yield comp


def _compositions_pos(total: int, parts: int):
    if parts == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(total - parts + 1, 0, -1):
        for rest in _compositions_pos(total - first, parts - 1):
            yield (first,) + rest


def smolyak_terms(spec: SparseGridSpec):
    """(multi-level, combination coefficient) pairs of the Smolyak sum."""
    d, S = spec.dim, spec.level
    q = S + d - 1
    for lv in _levels(d, max(d, q - d + 1), q):
        c = (-1) ** (q - sum(lv)) * comb(d - 1, q - sum(lv))
        if c != 0:
            yield lv, c


def smolyak_rule(spec: SparseGridSpec) -> QuadratureRule:
    """Smolyak combination of tensor rules with duplicate nodes merged."""
    cache: dict[int, QuadratureRule] = {}

    def rule_at(level):
        if level not in cache:
            cache[level] = rule_1d(spec.rule, points_at_level(level, spec.growth))
        return cache[level]

    all_nodes, all_weights = [], []
    for lv, c in smolyak_terms(spec):
        t = tensor_rule([rule_at(l) for l in lv])
        all_nodes.append(t.nodes)
        all_weights.append(c * t.weights)
    nodes, weights = merge_duplicates(np.vstack(all_nodes), np.concatenate(all_weights))
    desc = f"smolyak({spec.rule}, dim={spec.dim}, level={spec.level}, growth={spec.growth})"
    return QuadratureRule(nodes, weights, desc)


def save_rule(rule: QuadratureRule, path) -> None:
    """Write rows ``w x_1 ... x_d`` with 17 significant digits."""
    data = np.column_stack([rule.weights, rule.nodes])
    header = f"quadrature rule: {rule.description}\nn_nodes={len(rule)} dim={rule.dim}\nw x_1 ... x_d"
    np.savetxt(Path(path), data, fmt="%.16e", header=header)


def load_rule(path) -> QuadratureRule:
    data = np.loadtxt(Path(path), ndmin=2)
    desc = ""
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("# quadrature rule:"):
            desc = first.split(":", 1)[1].strip()
    return QuadratureRule(data[:, 1:], data[:, 0], desc)


def gaussian_moment(k: int) -> float:
    """E[x^k] for x ~ N(0, 1)."""
    if k % 2:
        return 0.0
    return float(np.prod(np.arange(k - 1, 0, -2))) if k > 0 else 1.0


def uniform_moment(k: int) -> float:
    """E[x^k] for x ~ U(-1, 1)."""
    return 0.0 if k % 2 else 1.0 / (k + 1)


def full_tensor_size(dim: int, level: int, growth: str) -> int:
    return points_at_level(level, growth) ** dim

