"""Probabilists' Hermite polynomials, total-degree index sets and Gauss-Hermite rules.

All quadrature rules integrate against the standard Gaussian density, so the
weights sum to one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigurationError, DimensionError, NumericalError

MAX_DEGREE = 40
MAX_TENSOR_NODES = 4_000_000


def _check_degree(n):
    if n < 0 or n > MAX_DEGREE:
        raise ConfigurationError(f"Hermite degree {n} outside supported range [0, {MAX_DEGREE}]")


def he_table(nmax: int, x) -> np.ndarray:
    """Values of He_0..He_nmax at ``x``; the last axis indexes the degree."""
    _check_degree(nmax)
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (nmax + 1,))
    out[..., 0] = 1.0
    if nmax >= 1:
        out[..., 1] = x
    for k in range(1, nmax):
        out[..., k + 1] = x * out[..., k] - k * out[..., k - 1]
    return out


def he(n: int, x):
    """Probabilists' Hermite polynomial He_n via the three-term recurrence."""
    _check_degree(n)
    vals = he_table(n, x)[..., n]
    return vals if vals.ndim else float(vals)


def he_orthonormal(n: int, x):
    """He_n / sqrt(n!), orthonormal under the standard Gaussian."""
    return he(n, x) / math.sqrt(math.factorial(n))


def he_orthonormal_table(nmax: int, x) -> np.ndarray:
    norms = np.sqrt([float(math.factorial(k)) for k in range(nmax + 1)])
    return he_table(nmax, x) / norms


@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    """Total-degree set ``{p in N^N : |p| <= p}`` in graded lexicographic order.

    Within one total degree, indices with a larger leading entry come first,
    so for ``N = 2`` the order starts ``(0,0), (1,0), (0,1), (2,0), ...``.
    """

    N: int
    p: int
    indices: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __iter__(self):
        return (tuple(int(v) for v in row) for row in self.indices)

    def position(self, idx) -> int:
        return _positions(self.N, self.p)[tuple(int(v) for v in idx)]


@lru_cache(maxsize=None)
def _index_array(N: int, p: int) -> np.ndarray:
    idx = [t for t in product(range(p + 1), repeat=N) if sum(t) <= p]
    idx.sort(key=lambda t: (sum(t), tuple(-v for v in t)))
    arr = np.array(idx, dtype=np.int64).reshape(-1, N)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _positions(N, p):
    return {tuple(int(v) for v in row): k for k, row in enumerate(_index_array(N, p))}


def multi_index_set(N: int, p: int) -> MultiIndexSet:
    if N < 1:
        raise ConfigurationError(f"stochastic dimension must be >= 1, got {N}")
    if p < 0:
        raise ConfigurationError(f"total degree must be >= 0, got {p}")
    return MultiIndexSet(int(N), int(p), _index_array(int(N), int(p)))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes of shape ``(n_nodes, N)`` and positive weights summing to one."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    def integrate(self, values) -> np.ndarray:
        """Weighted sum over the first axis of ``values``."""
        return np.tensordot(self.weights, np.asarray(values, dtype=float), axes=(0, 0))


@lru_cache(maxsize=None)
def _gauss_hermite_1d(n: int):
    if n < 1:
        raise ConfigurationError(f"number of Gauss-Hermite points must be >= 1, got {n}")
    if n == 1:
        return np.zeros(1), np.ones(1)
    # Golub-Welsch: Jacobi matrix of the monic recurrence He_{k+1} = x He_k - k He_{k-1}
    off = np.sqrt(np.arange(1, n, dtype=float))
    x = eigh_tridiagonal(np.zeros(n), off, eigvals_only=True)
    x = 0.5 * (x - x[::-1])  # enforce exact symmetry
    if not np.all(np.isfinite(x)) or np.any(np.diff(x) <= 0):
        raise NumericalError(f"Gauss-Hermite root computation failed for n={n}")
    # w_i = (n-1)! / (n He_{n-1}(x_i)^2), written with the orthonormal polynomial
    hn = he_orthonormal_table(n - 1, x)[:, n - 1]
    w = 1.0 / (n * hn**2)
    w = 0.5 * (w + w[::-1])
    return x, w


def gauss_hermite(n: int) -> QuadratureRule:
    """``n``-point rule, exact for polynomials of degree ``2n - 1``."""
    x, w = _gauss_hermite_1d(int(n))
    return QuadratureRule(x[:, None].copy(), w.copy())


def tensor_rule(n_per_dim: int, N: int) -> QuadratureRule:
    """Tensor product of ``n_per_dim``-point rules in ``N`` dimensions."""
    if N < 1:
        raise ConfigurationError(f"dimension must be >= 1, got {N}")
    total = int(n_per_dim) ** int(N)
    if total > MAX_TENSOR_NODES:
        raise ConfigurationError(f"tensor rule with {n_per_dim}^{N} = {total} nodes exceeds guard {MAX_TENSOR_NODES}")
    x, w = _gauss_hermite_1d(int(n_per_dim))
    grids = np.meshgrid(*([x] * N), indexing="ij")
    wgrids = np.meshgrid(*([w] * N), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return QuadratureRule(nodes, weights)


def points_for_degree(degree: int) -> int:
    """Points per dimension integrating total degree ``degree`` exactly."""
    return max(1, math.ceil((degree + 1) / 2))


def eval_multivariate(idx, eps) -> np.ndarray:
    """Orthonormal multivariate Hermite polynomial ``prod_n He_{p_n}(eps_n)/sqrt(p_n!)``.

    ``eps`` has shape ``(N,)`` or ``(..., N)``.
    """
    idx = np.asarray(idx, dtype=int)
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != idx.shape[0]:
        raise DimensionError(f"multi-index of dimension {idx.shape[0]} applied to {eps.shape[-1]}-vector")
    out = np.ones(eps.shape[:-1])
    for n, pn in enumerate(idx):
        out = out * he_orthonormal(int(pn), eps[..., n])
    return out if out.ndim else float(out)


def eval_basis(index_set: MultiIndexSet, eps) -> np.ndarray:
    """All basis polynomials of ``index_set`` at ``eps``, shape ``(..., len(index_set))``."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != index_set.N:
        raise DimensionError(f"index set of dimension {index_set.N} applied to {eps.shape[-1]}-vectors")
    tables = he_orthonormal_table(index_set.p, eps)  # (..., N, p+1)
    out = np.ones(eps.shape[:-1] + (len(index_set),))
    for n in range(index_set.N):
        out *= tables[..., n, :][..., index_set.indices[:, n]]
    return out


@lru_cache(maxsize=None)
def triple_product_1d(qmax: int, pmax: int) -> np.ndarray:
    """``T[k, i, j] = E[h_k h_i h_j]`` for orthonormal 1D Hermite polynomials.

    Computed with a Gauss-Hermite rule exact at degree ``qmax + 2*pmax``.
    """
    rule = gauss_hermite(points_for_degree(qmax + 2 * pmax))
    x = rule.nodes[:, 0]
    hq = he_orthonormal_table(qmax, x)
    hp = he_orthonormal_table(pmax, x)
    T = np.einsum("g,gk,gi,gj->kij", rule.weights, hq, hp, hp)
    T[np.abs(T) < 1e-13] = 0.0
    T.setflags(write=False)
    return T


def triple_products(q_set: MultiIndexSet, p_set: MultiIndexSet) -> np.ndarray:
    """``G[q, p, p'] = E[H_q H_p H_p']`` for multivariate orthonormal bases."""
    if q_set.N != p_set.N:
        raise DimensionError("index sets have different dimensions")
    T = triple_product_1d(q_set.p, p_set.p)
    G = np.ones((len(q_set), len(p_set), len(p_set)))
    for n in range(q_set.N):
        qi = q_set.indices[:, n]
        pi = p_set.indices[:, n]
        G *= T[np.ix_(qi, pi, pi)]
    return G
