"""Orthonormal univariate polynomial families and tensor-product bases.

Polynomials are normalized against a probability density (standard normal
for Hermite, uniform on [-1, 1] for Legendre), so that

    E[psi_i(x) psi_j(x)] = delta_ij

holds without a separate table of norms.
"""
from __future__ import annotations

import enum
import itertools
from math import comb
from typing import Sequence

import numpy as np


class PolynomialFamily(enum.Enum):
    """Polynomial family paired with its weight (probability) density."""

    HERMITE = "hermite"  # probabilists' Hermite, weight N(0, 1)
    LEGENDRE = "legendre"  # weight U(-1, 1)

    @classmethod
    def parse(cls, name: "str | PolynomialFamily") -> "PolynomialFamily":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        aliases = {"hermite": cls.HERMITE, "he": cls.HERMITE, "normal": cls.HERMITE,
                   "gaussian": cls.HERMITE, "legendre": cls.LEGENDRE,
                   "uniform": cls.LEGENDRE}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown polynomial family {name!r}") from None


def recurrence(family: PolynomialFamily, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal three-term recurrence coefficients.

    Returns ``(a, b)`` with ``a`` of length ``n`` and ``b`` of length ``n + 1``
    such that ``x psi_k = b[k+1] psi_{k+1} + a[k] psi_k + b[k] psi_{k-1}``.
    ``b[0]`` is unused and set to zero.
    """
    family = PolynomialFamily.parse(family)
    k = np.arange(n + 1, dtype=float)
    a = np.zeros(n)
    if family is PolynomialFamily.HERMITE:
        b = np.sqrt(k)
    else:
        b = k / np.sqrt(np.maximum(4.0 * k**2 - 1.0, 1.0))
    b[0] = 0.0
    return a, b


def eval_all(family: PolynomialFamily, max_degree: int, x) -> np.ndarray:
    """Evaluate psi_0 .. psi_max_degree at ``x``.

    The output has shape ``x.shape + (max_degree + 1,)``.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be non-negative")
    x = np.asarray(x, dtype=float)
    a, b = recurrence(family, max_degree + 1)
    out = np.empty(x.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = (x - a[0]) / b[1]
    for k in range(1, max_degree):
        out[..., k + 1] = ((x - a[k]) * out[..., k] - b[k] * out[..., k - 1]) / b[k + 1]
    return out


def eval_univariate(family: PolynomialFamily, degree: int, x):
    """Orthonormal polynomial of the given degree evaluated at ``x``."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    vals = eval_all(family, degree, x)[..., degree]
    return float(vals) if np.ndim(vals) == 0 else vals


class MultiIndexSet:
    """Ordered collection of multi-indices (one row per basis term)."""

    def __init__(self, indices):
        arr = np.array(indices, dtype=np.int64, ndmin=2)
        if arr.size == 0:
            raise ValueError("empty multi-index set")
        if np.any(arr < 0):
            raise ValueError("multi-index entries must be non-negative")
        self.indices = arr
        self.indices.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.indices.shape[1]

    @property
    def max_order(self) -> int:
        return int(self.indices.sum(axis=1).max())

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __iter__(self):
        return (tuple(int(v) for v in row) for row in self.indices)

    def __contains__(self, index) -> bool:
        return tuple(index) in set(self)

    def __eq__(self, other) -> bool:
        return isinstance(other, MultiIndexSet) and np.array_equal(self.indices, other.indices)

    def __repr__(self) -> str:
        return f"MultiIndexSet(dim={self.dim}, size={len(self)}, max_order={self.max_order})"

    def is_admissible(self) -> bool:
        """True when the set is downward closed."""
        members = set(self)
        for idx in members:
            for j, v in enumerate(idx):
                if v > 0:
                    lower = idx[:j] + (v - 1,) + idx[j + 1:]
                    if lower not in members:
                        return False
        return True

    def restrict(self, max_degree) -> "MultiIndexSet":
        """Members whose j-th entry is at most ``max_degree[j]`` (scalar broadcasts)."""
        cap = np.broadcast_to(np.asarray(max_degree), (self.dim,))
        keep = np.all(self.indices <= cap, axis=1)
        return MultiIndexSet(self.indices[keep])

    def position(self, index) -> int:
        for k, row in enumerate(self):
            if row == tuple(index):
                return k
        raise KeyError(index)


def _compositions(total: int, parts: int):
    """Compositions of ``total`` into ``parts`` non-negative integers, first part descending."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def total_order_set(dim: int, order: int) -> MultiIndexSet:
    """All multi-indices with ``|i| <= order`` in graded lexicographic order."""
    if dim < 1 or order < 0:
        raise ValueError("need dim >= 1 and order >= 0")
    rows = list(itertools.chain.from_iterable(
        _compositions(p, dim) for p in range(order + 1)))
    assert len(rows) == comb(dim + order, dim)
    return MultiIndexSet(rows)


def eval_multivariate(index_set: MultiIndexSet,
                      families: "Sequence[PolynomialFamily] | PolynomialFamily",
                      y) -> np.ndarray:
    """Evaluate the tensor-product basis at one point or a batch of points.

    Parameters
    ----------
    index_set : MultiIndexSet
    families : sequence of PolynomialFamily, one per dimension (a single
        family is broadcast to all dimensions)
    y : array_like, shape (n_y,) or (n_points, n_y)

    Returns
    -------
    ndarray, shape (n_terms,) or (n_points, n_terms)
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = np.atleast_2d(y)
    n_y = index_set.dim
    if pts.shape[1] != n_y:
        raise ValueError(f"point dimension {pts.shape[1]} does not match index set dimension {n_y}")
    if isinstance(families, (PolynomialFamily, str)):
        families = [families] * n_y
    if len(families) != n_y:
        raise ValueError("need one polynomial family per dimension")
    idx = index_set.indices
    out = np.ones((pts.shape[0], len(index_set)))
    for j in range(n_y):
        deg = int(idx[:, j].max())
        if deg == 0:
            continue
        table = eval_all(families[j], deg, pts[:, j])
        out *= table[:, idx[:, j]]
    return out[0] if single else out
